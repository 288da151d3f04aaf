use anyhow::Result;
use fakepcd_core::simsource::{build_scenario, write_dataset, Split};

use crate::run::{resolve_config, Run, SCENARIO_CFG};
use crate::Cli;

pub fn run(cli: &Cli, run: &mut Run) -> Result<()> {
    let cfg = resolve_config(cli, None)?;
    run.config(&cfg);
    let data = build_scenario(&cfg.scenario)?;
    write_dataset(&data, &run.out)?;
    run.write(SCENARIO_CFG, &cfg.to_text())?;
    for split in [Split::Train, Split::Validation, Split::Test] {
        let n = data.split(split).len();
        run.result(&format!("{}_clouds", split.name()), n);
        println!("{}: {n} clouds", split.name());
    }
    Ok(())
}
