use std::fs;

use serde::Serialize;

use gfloam::cloud_io::read_trajectory;
use gfloam::eval::{ate_with, rpe, Alignment, AteReport, RpeReport};

use crate::failure::Failure;
use crate::EvalArgs;

#[derive(Serialize)]
struct Report {
    alignment: &'static str,
    ate: AteReport,
    rpe: RpeReport,
}

pub fn evaluate(args: &EvalArgs) -> Result<(), Failure> {
    let (alignment, name) = match args.align.as_str() {
        "se3" => (Alignment::Se3, "se3"),
        "se2" => (Alignment::Se2, "se2"),
        other => return Err(Failure::usage(format!("unknown alignment '{other}' (expected se3 or se2)"))),
    };
    let read = |p: &std::path::Path| read_trajectory(p).map_err(|e| Failure::data(format!("{}: {e}", p.display())));
    let est = read(&args.est)?;
    let gt = read(&args.gt)?;
    let ate = ate_with(&est, &gt, alignment)?;
    let rpe = rpe(&est, &gt, args.rpe_delta)?;
    if let Some(path) = &args.aligned_csv {
        fs::write(path, ate.aligned_csv())?;
    }
    let report = Report {
        alignment: name,
        ate,
        rpe,
    };
    println!("{}", serde_json::to_string_pretty(&report).map_err(std::io::Error::from)?);
    Ok(())
}
