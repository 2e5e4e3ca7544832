//! Round trip of the on-disk artifacts: training trace, results CSV and
//! training config.

use detflow::estimators::{append_rows, mc_estimate, read_rows, ResultRow};
use detflow::flows::FlowSpec;
use detflow::operators::load_fixture;
use detflow::train::{train, Profile, TrainConfig, TrainTrace};

fn main() -> detflow::Result<()> {
    let dir = std::env::temp_dir().join("detflow-files");
    std::fs::create_dir_all(&dir)?;

    let mut cfg = TrainConfig::for_profile(Profile::Desk, "A3", FlowSpec::coupling(10), 4);
    cfg.iterations = 20;
    cfg.batch_size = 64;
    cfg.checkpoint_every = 0;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let again = TrainConfig::from_json_file(&dir.join("config.json"))?;
    assert_eq!(again, cfg);

    let a = load_fixture("A3")?;
    let out = train(&cfg, &a, None)?;
    out.trace.write_csv(&dir.join("trace.csv"))?;
    println!("trace rows read back: {}", TrainTrace::read_csv(&dir.join("trace.csv"))?.records.len());

    let results = dir.join("results.csv");
    let _ = std::fs::remove_file(&results);
    let rows: Vec<ResultRow> =
        [100, 1000].iter().map(|n| mc_estimate(&a, *n, 0).map(|r| ResultRow::new("A3", &r))).collect::<detflow::Result<_>>()?;
    append_rows(&results, &rows)?;
    append_rows(&results, &rows)?;
    println!("{}", std::fs::read_to_string(&results)?);
    println!("rows: {}", read_rows(&results)?.len());
    Ok(())
}
