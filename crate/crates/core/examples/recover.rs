//! Fits the default synthetic phantom and prints recovery numbers.
//!
//! ```text
//! cargo run --release -p heartfit --example recover -- [init] [config-json]
//! ```
//!
//! `init` is `ed` (end-diastolic frame repeated, the default) or `truth`.
//! The optional JSON object is merged over the default fit configuration.

use std::time::Instant;

use heartfit::fit::{fit, FitConfig, FitProblem};
use heartfit::metrics::{mesh_jitter, per_frame_chamfer, view_contour_metrics};
use heartfit::render::Observations;
use heartfit::{MeshSequence, Structure, SynthConfig, SynthDataset};

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let init_mode = args.get(1).map(String::as_str).unwrap_or("ed");
    let mut cfg = serde_json::to_value(FitConfig {
        lambda_mse: 0.0,
        ..FitConfig::default()
    })?;
    if let Some(patch) = args.get(2) {
        merge(&mut cfg, serde_json::from_str(patch)?);
    }
    let config: FitConfig = serde_json::from_value(cfg)?;

    let data = SynthDataset::generate(&SynthConfig::default())?;
    let n = data.sequence.frame_count();
    let ed = data.sequence.mesh(0);
    let init = match init_mode {
        "truth" => data.sequence.clone(),
        _ => MeshSequence::repeat(&ed, n),
    };
    let planes = data.plane_frames();
    let problem = FitProblem::new(ed, planes.clone(), data.observations.clone(), init.clone(), None)?;

    let t1 = Instant::now();
    let report = fit(&problem, &config)?;
    println!("fit: {} steps in {:.1?}", config.steps, t1.elapsed());
    println!("loss {:.6} -> {:.6}", report.trace[0].total, report.final_loss.total);
    println!("initial terms {:?}", report.trace[0].terms);
    println!("final terms {:?}", report.final_loss.terms);

    let before = per_frame_chamfer(&init, &data.sequence)?;
    let after = per_frame_chamfer(&report.sequence, &data.sequence)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "mean per-frame CD {:.4} -> {:.4} mm ({:.1}% reduction)",
        mean(&before),
        mean(&after),
        100.0 * (1.0 - mean(&after) / mean(&before))
    );
    println!(
        "J_m {:.5} (truth {:.5})",
        mesh_jitter(&report.sequence, Structure::Full, true)?,
        mesh_jitter(&data.sequence, Structure::Full, true)?
    );
    let vs = heartfit::metrics::sequence_chamfer(&report.sequence, &data.sequence)?;
    for (s, (cd, hd)) in vs {
        println!("{:>8}: CD {cd:.3} HD {hd:.3}", s.name());
    }

    let obs = Observations::new(&planes, n, data.observations.clone())?;
    let views = view_contour_metrics(&report.sequence, &planes, &obs, 1.0)?;
    let mut worst: f64 = 0.0;
    for (p, s) in planes.iter().zip(views) {
        if let Some(s) = s {
            worst = worst.max(s.mcd);
            print!("{}:{:.2}/{:.0}% ", p.view, s.mcd, s.bf);
        }
    }
    println!("\nworst MCD {worst:.3} mm");
    Ok(())
}
