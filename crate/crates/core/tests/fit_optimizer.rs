mod common;

use heartfit::fit::{fit, gradcheck, mse_loss, total_loss, FitConfig, FitProblem, GradcheckOptions, Term};
use heartfit::mesh::{build_edge_list, MeshSequence};
use heartfit::metrics::per_frame_chamfer;
use heartfit::regularize::{edge_loss, normal_loss, temporal_jerk_loss, FacePairs};
use heartfit::render::{render_loss, Observations};
use heartfit::vec3::Vec3;
use heartfit::{Component, Error, LabeledMesh, SynthConfig, SynthDataset};
use rand::Rng;

fn small_synth() -> SynthDataset {
    SynthDataset::generate(&SynthConfig {
        frames: 5,
        sax_slices: 3,
        spacing: 2.4,
        extent: (80, 80),
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn jittered(seq: &MeshSequence, amp: f64, seed: u64) -> MeshSequence {
    let mut r = common::rng(seed);
    let frames = seq
        .frames()
        .iter()
        .map(|f| f.iter().map(|p| p.map(|x| x + amp * r.gen_range(-1.0..1.0))).collect())
        .collect();
    seq.with_frames(frames).unwrap()
}

fn problem(data: &SynthDataset, init: MeshSequence, reference: bool) -> FitProblem {
    FitProblem::new(
        data.sequence.mesh(0),
        data.plane_frames(),
        data.observations.clone(),
        init,
        reference.then(|| data.sequence.clone()),
    )
    .unwrap()
}

#[test]
fn mse_examples() {
    let tri = LabeledMesh::new(
        vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        vec![[0, 1, 2]],
        vec![Component::Lv; 3],
    )
    .unwrap();
    let a = MeshSequence::repeat(&tri, 1);
    assert_eq!(mse_loss(&a, &a).unwrap().0, 0.0);

    let mut frames = a.frames().to_vec();
    frames[0][0][0] += 3.0;
    let b = a.with_frames(frames).unwrap();
    // One offset vertex of three: 9 / (1·3·3).
    assert_eq!(mse_loss(&b, &a).unwrap().0, 1.0);

    let two = MeshSequence::repeat(&tri, 2);
    assert!(matches!(mse_loss(&b, &two), Err(Error::Shape(_))));
}

#[test]
fn mse_gradient_is_exact_under_central_differences() {
    let data = small_synth();
    let pred = jittered(&data.sequence, 1.0, 1);
    let (_, g) = mse_loss(&pred, &data.sequence).unwrap();
    let mut r = common::rng(9);
    for _ in 0..50 {
        let t = r.gen_range(0..pred.frame_count());
        let i = r.gen_range(0..pred.vertex_count());
        let k = r.gen_range(0..3);
        let f = |v: &[Vec3]| {
            let mut fr = pred.frames().to_vec();
            fr[t] = v.to_vec();
            mse_loss(&pred.with_frames(fr).unwrap(), &data.sequence).unwrap().0
        };
        let num = common::central_difference(pred.frame(t), i, k, 1e-3, f);
        assert!((num - g[t][i][k]).abs() <= 1e-8 * g[t][i][k].abs().max(1e-10), "{num} vs {}", g[t][i][k]);
    }
}

#[test]
fn total_loss_is_linear_in_the_weights() {
    let data = small_synth();
    let pred = jittered(&data.sequence, 1.0, 2);
    let p = problem(&data, pred.clone(), true);

    let zero = FitConfig {
        lambda_mse: 0.0,
        lambda_dr: 0.0,
        lambda_edge: 0.0,
        lambda_norm: 0.0,
        lambda_temp: 0.0,
        ..FitConfig::default()
    };
    let (l, g, _) = total_loss(&pred, &p, &zero).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.iter().flatten().flatten().all(|&x| x == 0.0));

    let dr_only = FitConfig { lambda_dr: 5.0, ..zero };
    let (l, _, _) = total_loss(&pred, &p, &dr_only).unwrap();
    let planes = data.plane_frames();
    let obs = Observations::new(&planes, pred.frame_count(), data.observations.clone()).unwrap();
    let (dr, dg) = render_loss(&pred, &planes, &obs, &dr_only.renderer).unwrap();
    assert_eq!(l, 5.0 * dr);

    // Gradient of the full objective against independently computed terms.
    let cfg = FitConfig::default();
    let (total, grad, breakdown) = total_loss(&pred, &p, &cfg).unwrap();
    let n = pred.frame_count() as f64;
    let edges = build_edge_list(&data.sequence.mesh(0));
    let pairs = FacePairs::build(pred.faces());
    let (mse, mg) = mse_loss(&pred, &data.sequence).unwrap();
    let (jerk, jg) = temporal_jerk_loss(&pred, true).unwrap();
    let mut edge_sum = 0.0;
    let mut norm_sum = 0.0;
    for t in 0..pred.frame_count() {
        let (e, eg) = edge_loss(pred.frame(t), &edges);
        let (nl, ng) = normal_loss(pred.frame(t), pred.faces(), &pairs).unwrap();
        edge_sum += e;
        norm_sum += nl;
        for i in 0..pred.vertex_count() {
            for k in 0..3 {
                let expect = cfg.lambda_mse * mg[t][i][k]
                    + cfg.lambda_dr * dg[t][i][k]
                    + cfg.lambda_edge * eg[i][k] / n
                    + cfg.lambda_norm * ng[i][k] / n
                    + cfg.lambda_temp * jg[t][i][k];
                let got = grad[t][i][k];
                assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1e-6), "t{t} v{i}[{k}] {got} vs {expect}");
            }
        }
    }
    let expect_total = cfg.lambda_mse * mse
        + cfg.lambda_dr * dr
        + cfg.lambda_edge * edge_sum / n
        + cfg.lambda_norm * norm_sum / n
        + cfg.lambda_temp * jerk;
    assert!((total - expect_total).abs() <= 1e-9 * expect_total.abs());
    assert!((breakdown.total(&cfg) - total).abs() <= 1e-9 * total.abs());

    // Re-weighting the breakdown offline matches a fresh evaluation.
    let other = FitConfig {
        lambda_mse: 1.0,
        lambda_dr: 2.0,
        lambda_edge: 0.3,
        lambda_norm: 4.0,
        lambda_temp: 0.7,
        ..FitConfig::default()
    };
    let (fresh, _, _) = total_loss(&pred, &p, &other).unwrap();
    assert!((breakdown.total(&other) - fresh).abs() <= 1e-12 * fresh.abs());
}

#[test]
fn mse_marked_inapplicable_without_reference() {
    let data = small_synth();
    let p = problem(&data, data.sequence.clone(), false);
    let (_, _, b) = total_loss(&data.sequence, &p, &FitConfig::default()).unwrap();
    assert_eq!(b.mse, None);
    assert_eq!(b.get(Term::Mse), None);
    assert!(b.temp.is_some());
}

#[test]
fn zero_steps_rejected() {
    let data = small_synth();
    let p = problem(&data, data.sequence.clone(), false);
    let err = fit(&p, &FitConfig { steps: 0, ..FitConfig::default() }).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "steps"), "{err}");
}

#[test]
fn fit_descends_and_is_deterministic() {
    let data = small_synth();
    let p = problem(&data, MeshSequence::repeat(&data.sequence.mesh(0), 5), false);
    let cfg = FitConfig {
        steps: 15,
        lambda_mse: 0.0,
        ..FitConfig::default()
    };
    let a = fit(&p, &cfg).unwrap();
    let b = fit(&p, &cfg).unwrap();
    assert_eq!(a.trace.len(), 15);
    assert!(a.descended());
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.final_loss, b.final_loss);
    assert_eq!(a.sequence, b.sequence);
    assert_eq!(a.trace_csv(), b.trace_csv());
    let csv = a.trace_csv();
    assert!(csv.lines().nth(1).unwrap().split(',').nth(2) == Some("NA"));

    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = pool.install(|| fit(&p, &cfg).unwrap());
    assert_eq!(a.sequence, c.sequence);
    assert_eq!(a.trace, c.trace);
}

#[test]
fn vertex_supervision_alone_keeps_ground_truth_fixed() {
    let data = small_synth();
    let p = problem(&data, data.sequence.clone(), true);
    let cfg = FitConfig {
        steps: 20,
        lambda_dr: 0.0,
        lambda_edge: 0.0,
        lambda_norm: 0.0,
        lambda_temp: 0.0,
        ..FitConfig::default()
    };
    let report = fit(&p, &cfg).unwrap();
    assert_eq!(report.sequence, data.sequence);
    assert_eq!(report.final_loss.total, 0.0);
}

#[test]
fn supervised_fit_from_ground_truth_stays_close() {
    let data = small_synth();
    let p = problem(&data, data.sequence.clone(), true);
    let cfg = FitConfig {
        steps: 100,
        learning_rate: 0.01,
        ..FitConfig::default()
    };
    let report = fit(&p, &cfg).unwrap();
    let disp: Vec<f64> = report
        .sequence
        .frames()
        .iter()
        .zip(data.sequence.frames())
        .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| heartfit::vec3::dist(p, q)))
        .collect();
    let mean = disp.iter().sum::<f64>() / disp.len() as f64;
    assert!(mean < 0.5, "mean displacement {mean}");
    let cd = per_frame_chamfer(&report.sequence, &data.sequence).unwrap();
    assert!(cd.iter().all(|&c| c < 0.5), "{cd:?}");
}

#[test]
fn gradcheck_passes_on_jittered_synthetic_problem() {
    let data = small_synth();
    let p = problem(&data, jittered(&data.sequence, 0.5, 5), true);
    let report = gradcheck(&p, &FitConfig::default(), &GradcheckOptions::default()).unwrap();
    assert!(report.passed(), "{}", report.table());
    assert_eq!(report.terms.len(), 5);
    assert!(report.terms.iter().all(|t| t.checked == 200));
}

#[test]
fn gradcheck_rejects_nonpositive_step() {
    let data = small_synth();
    let p = problem(&data, data.sequence.clone(), false);
    for step in [0.0, -1e-3, f64::NAN] {
        let opts = GradcheckOptions { step, ..GradcheckOptions::default() };
        assert!(gradcheck(&p, &FitConfig::default(), &opts).is_err());
    }
}

#[test]
fn divergence_reports_step_and_term() {
    let data = small_synth();
    let p = problem(&data, data.sequence.clone(), false);
    let cfg = FitConfig {
        steps: 5,
        learning_rate: 1e300,
        ..FitConfig::default()
    };
    match fit(&p, &cfg) {
        Err(Error::NonFinite { step, term }) => {
            assert!(step >= 1);
            assert!(["dr", "edge", "norm", "temp"].contains(&term.as_str()));
        }
        other => panic!("expected non-finite failure, got {other:?}"),
    }
}
