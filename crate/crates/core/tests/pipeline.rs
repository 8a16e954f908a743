//! Files on disk through cleaning, fitting, summaries and projection.

use sirprev::analysis::{paths_from_draws, project, read_summary, summarize, write_summary, DoseRamp, ProjectionScenario};
use sirprev::data::{
    attach_surveys, clean, ingest_timeseries_path, load_survey_path, make_periods, HorizonRule, PopulationTable,
};
use sirprev::model::{PriorSpec, SirModel};
use sirprev::sampler::{sample, SamplerConfig};
use sirprev::synth::{generate, write_fixture};
use sirprev::validate::short_truth;

#[test]
fn fixture_files_fit_and_project() {
    let dir = tempfile::tempdir().unwrap();
    let truth = short_truth(30);
    let generated = generate(&truth, 4).unwrap();
    write_fixture(dir.path(), &truth, &generated).unwrap();

    let pops = PopulationTable::from_csv(std::fs::File::open(dir.path().join("populations.csv")).unwrap()).unwrap();
    let raw = ingest_timeseries_path(&dir.path().join("timeseries.csv"), &pops).unwrap();
    assert_eq!(raw.len(), 1);
    let mut ds = clean(&raw[0]).unwrap().apply_horizon(HorizonRule::DatasetStart, None).unwrap();
    assert!(ds.cleaning_log.is_empty());
    attach_surveys(&mut ds, &load_survey_path(&dir.path().join("surveys.json")).unwrap()).unwrap();
    ds.periods = make_periods(&ds, truth.period_days).unwrap();
    assert_eq!(ds.deaths, generated.deaths);
    assert_eq!(ds.cases, generated.cases);
    assert_eq!(ds.tests, generated.tests);
    assert_eq!(ds.surveys, generated.surveys);
    assert_eq!(ds.periods, generated.periods);

    let model = SirModel::new(ds.model_data(), PriorSpec::default(), truth.delay.clone()).unwrap();
    let cfg = SamplerConfig {
        chains: 2,
        total_steps: 300,
        warmup_steps: 150,
        seed: 8,
        ..SamplerConfig::default()
    };
    let draws = sample(&model, &cfg).unwrap();
    assert_eq!(draws.n_draws(), 300);
    assert_eq!(sample(&model, &cfg).unwrap().draws, draws.draws);

    let s = summarize(&draws, &ds).unwrap();
    assert_eq!(s.days(), 30);
    assert!(s.cumulative_incidence.is_monotone());
    let ifr = s.ifr.unwrap();
    assert!(ifr.lower <= ifr.median && ifr.median <= ifr.upper);
    write_summary(dir.path(), &s).unwrap();
    assert_eq!(read_summary(dir.path(), &ds.region_code).unwrap(), s);

    let paths = paths_from_draws(&draws, &ds).unwrap();
    let scenario = ProjectionScenario {
        start_day: paths.last_day(),
        dose_ramp: DoseRamp {
            start_level: 0.0,
            end_level: (0.0, 0.0),
            ramp_end_day: paths.last_day(),
        },
        doses: None,
        frozen_r: true,
        frozen_undercount: true,
        horizon: 10,
    };
    let p = project(&paths, &scenario, 1).unwrap();
    assert_eq!(p.days(), 10);
    assert_eq!(p.vaccinated.median(9), Some(0.0));
    assert!(p.cumulative_immunity.is_monotone());
    // Day 0 of the projection continues from the last fitted day.
    let fitted = s.cumulative_incidence.median(29).unwrap();
    assert!(p.cumulative_immunity.median(0).unwrap() >= fitted - 1e-12);
}
