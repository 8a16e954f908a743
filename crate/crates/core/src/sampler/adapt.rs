//! Warmup adaptation: dual averaging of the step size and the window
//! schedule for metric estimation.

/// Nesterov dual averaging towards a target acceptance statistic.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    delta: f64,
    mu: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    /// Starts a fresh adaptation shrinking towards `10 * eps`.
    pub fn new(delta: f64, eps: f64) -> Self {
        Self {
            delta,
            mu: (10.0 * eps).ln(),
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    /// Updates with one acceptance statistic and returns the next step size.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = if accept_stat.is_nan() { 0.0 } else { accept_stat.min(1.0) };
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// Averaged step size used after warmup.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup windows: an initial fast phase (15%), slow metric windows doubling
/// from 25 iterations with the last one stretched to the end, and a final
/// fast phase (10%).
#[derive(Debug, Clone)]
pub struct WindowSchedule {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window_end: usize,
    counter: usize,
}

impl WindowSchedule {
    pub const BASE_WINDOW: usize = 25;

    pub fn new(warmup: usize) -> Self {
        let init_buffer = (0.15 * warmup as f64) as usize;
        let term_buffer = (0.1 * warmup as f64) as usize;
        let slow = warmup.saturating_sub(init_buffer + term_buffer);
        let window_size = Self::BASE_WINDOW.min(slow);
        let mut s = Self {
            warmup,
            init_buffer,
            term_buffer,
            window_size,
            next_window_end: (init_buffer + window_size).saturating_sub(1),
            counter: 0,
        };
        s.stretch();
        s
    }

    fn last_slow(&self) -> usize {
        (self.warmup - self.term_buffer).saturating_sub(1)
    }

    fn stretch(&mut self) {
        // Absorb the following window into this one if it would not fit.
        let boundary = self.next_window_end + 2 * self.window_size;
        if boundary >= self.warmup - self.term_buffer {
            self.next_window_end = self.last_slow();
        }
    }

    pub fn in_slow_window(&self) -> bool {
        self.window_size > 0
            && self.counter >= self.init_buffer
            && self.counter < self.warmup - self.term_buffer
    }

    pub fn end_of_slow_window(&self) -> bool {
        self.window_size > 0 && self.in_slow_window() && self.counter == self.next_window_end
    }

    pub fn advance(&mut self) {
        if self.end_of_slow_window() && self.next_window_end != self.last_slow() {
            self.window_size *= 2;
            self.next_window_end = self.counter + self.window_size;
            if self.next_window_end != self.last_slow() {
                self.stretch();
            }
        }
        self.counter += 1;
    }

    /// Iteration indices at which the metric is updated.
    pub fn window_ends(warmup: usize) -> Vec<usize> {
        let mut s = Self::new(warmup);
        let mut ends = Vec::new();
        for i in 0..warmup {
            if s.end_of_slow_window() {
                ends.push(i);
            }
            s.advance();
        }
        ends
    }
}
