//! Trains the `ou-desk` preset on freshly simulated OU data and writes the
//! final and averaged checkpoints plus the loss log to the given directory.
//!
//! cargo run --release --example train_ou -p sdegan-core -- out/

use std::path::PathBuf;

use sdegan::datasets::{generate_ou, OUParams};
use sdegan::gan::{train_with, Phase, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "train_ou".into()));
    std::fs::create_dir_all(&dir)?;
    let data = generate_ou(&OUParams::default())?;
    let config = TrainConfig::preset("ou-desk")?;
    let report = train_with(&config, &data, |r| {
        if r.phase == Phase::Generator && r.step % 50 == 0 {
            eprintln!("step {} loss {:.5}", r.step, r.loss);
        }
    })?;
    report.final_model.to_checkpoint().save(&dir.join("final.ckpt"))?;
    if let Some(swa) = &report.swa_model {
        swa.to_checkpoint().save(&dir.join("swa.ckpt"))?;
    }
    std::fs::write(dir.join("losses.csv"), report.to_csv())?;
    eprintln!("done in {:.0}s", report.wall_clock_secs);
    Ok(())
}
