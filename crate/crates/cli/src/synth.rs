use std::fs;

use gfloam::cloud_io::{write_scan_ply, write_trajectory};
use gfloam::synth::{generate_scene, generate_trajectory, simulate_sequence, SceneParams, SensorModel};

use crate::failure::Failure;
use crate::SynthArgs;

pub fn synth(args: &SynthArgs) -> Result<(), Failure> {
    if args.frames == 0 {
        return Err(Failure::usage("--frames must be at least 1"));
    }
    if !(args.rate_hz > 0.0) {
        return Err(Failure::usage("--rate-hz must be positive"));
    }
    let sensor = SensorModel {
        rings: args.rings,
        range_noise_sigma: args.sigma,
        outlier_rate: args.outlier_rate,
        outlier_magnitude: args.outlier_magnitude,
        ..Default::default()
    };
    sensor.validate()?;
    let scene = generate_scene(args.scene, args.seed, &SceneParams::default_for(args.scene))?;
    let gt = generate_trajectory(args.scene, args.frames, args.rate_hz);
    let scans = simulate_sequence(&scene, &sensor, &gt, args.seed)?;

    let dir = args.output.join("scans");
    fs::create_dir_all(&dir)?;
    for (i, sim) in scans.iter().enumerate() {
        write_scan_ply(&sim.scan, &dir.join(format!("{i:06}.ply")), true)?;
    }
    write_trajectory(&gt, &args.output.join("gt.tum"))?;
    fs::write(args.output.join("scene.toml"), scene.to_toml())?;
    fs::write(args.output.join("sensor.toml"), sensor.to_toml())?;
    log::info!("synth: wrote {} scans to {}", scans.len(), dir.display());
    Ok(())
}
