mod common;

use common::{central_difference, grad_ok, jittered_icosphere, rng, torus};
use heartfit::mesh::{build_edge_list, MeshSequence};
use heartfit::regularize::{edge_loss, normal_loss, temporal_jerk_loss, FacePairs};
use heartfit::vec3::{Rigid, Vec3};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn edge_loss_zero_at_template_and_closed_form_under_scale() {
    let mesh = jittered_icosphere(2, 10.0, 0.5, 1);
    let edges = build_edge_list(&mesh);
    let (l, g) = edge_loss(mesh.vertices(), &edges);
    assert_eq!(l, 0.0);
    assert!(g.iter().flatten().all(|&x| x == 0.0));

    let s = 1.3;
    let scaled: Vec<Vec3> = mesh.vertices().iter().map(|p| p.map(|x| s * x)).collect();
    let expected = edges.rest_lengths.iter().map(|r| ((s - 1.0) * r).powi(2)).sum::<f64>() / edges.rest_lengths.len() as f64;
    let (l, _) = edge_loss(&scaled, &edges);
    assert!((l - expected).abs() <= 1e-12 * expected);
}

#[test]
fn flat_sheet_has_zero_normal_loss() {
    let mut vertices = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            vertices.push([i as f64, j as f64 * 1.5, 2.0]);
        }
    }
    let mut faces = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            let a = i * 4 + j;
            faces.push([a, a + 4, a + 5]);
            faces.push([a, a + 5, a + 1]);
        }
    }
    let pairs = FacePairs::build(&faces);
    let (l, g) = normal_loss(&vertices, &faces, &pairs).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.iter().flatten().all(|x| x.abs() < 1e-15));
}

#[test]
fn edge_and_normal_gradients_match_central_differences() {
    for seed in 0..20 {
        let template = jittered_icosphere(1, 8.0, 0.3, 100 + seed);
        let edges = build_edge_list(&template);
        let pairs = FacePairs::build(template.faces());
        let mut r = rng(seed);
        let verts: Vec<Vec3> = template
            .vertices()
            .iter()
            .map(|p| p.map(|x| x + r.gen_range(-1.0..1.0)))
            .collect();
        let (_, ge) = edge_loss(&verts, &edges);
        let (_, gn) = normal_loss(&verts, template.faces(), &pairs).unwrap();
        for i in 0..verts.len() {
            for k in 0..3 {
                let ne = central_difference(&verts, i, k, 1e-4, |v| edge_loss(v, &edges).0);
                assert!(grad_ok(ge[i][k], ne, 1e-5, 1e-8), "edge seed {seed} v{i}[{k}]: {} vs {ne}", ge[i][k]);
                let nn = central_difference(&verts, i, k, 1e-4, |v| normal_loss(v, template.faces(), &pairs).unwrap().0);
                assert!(grad_ok(gn[i][k], nn, 1e-4, 1e-8), "normal seed {seed} v{i}[{k}]: {} vs {nn}", gn[i][k]);
            }
        }
    }
}

fn jerk_brute(frames: &[Vec<Vec3>], cyclic: bool) -> f64 {
    let n = frames.len() as isize;
    let at = |t: isize| &frames[t.rem_euclid(n) as usize];
    let centres: Vec<isize> = if cyclic { (0..n).collect() } else { (1..n - 2).collect() };
    let mut sum = 0.0;
    let mut count = 0;
    for &t in &centres {
        for i in 0..frames[0].len() {
            let mut sq = 0.0;
            for k in 0..3 {
                let d = at(t + 2)[i][k] - 3.0 * at(t + 1)[i][k] + 3.0 * at(t)[i][k] - at(t - 1)[i][k];
                sq += d * d;
            }
            sum += sq;
            count += 1;
        }
    }
    sum / count as f64
}

fn sequence(frames: Vec<Vec<Vec3>>) -> MeshSequence {
    let base = torus(3, 4, 5.0, 1.0, 0.0, 0);
    MeshSequence::repeat(&base, frames.len()).with_frames(frames).unwrap()
}

#[test]
fn jerk_matches_brute_force_and_annihilates_quadratics() {
    let n = 12;
    let v = 12;
    let sinus: Vec<Vec<Vec3>> = (0..n)
        .map(|t| {
            let phase = std::f64::consts::TAU * t as f64 / n as f64;
            (0..v).map(|i| [3.0 * phase.sin(), i as f64, 0.5 * (phase + i as f64).cos()]).collect()
        })
        .collect();
    for cyclic in [true, false] {
        let (l, _) = temporal_jerk_loss(&sequence(sinus.clone()), cyclic).unwrap();
        let b = jerk_brute(&sinus, cyclic);
        assert!((l - b).abs() <= 1e-12 * b.max(1.0), "{l} vs {b}");
    }
    // Cyclic third difference of a pure sinusoid of period N scales by (2 sin(π/N))³.
    let amp = 3.0;
    let single: Vec<Vec<Vec3>> = (0..n)
        .map(|t| vec![[amp * (std::f64::consts::TAU * t as f64 / n as f64).sin(), 0.0, 0.0]; v])
        .collect();
    let (l, _) = temporal_jerk_loss(&sequence(single), true).unwrap();
    let factor = (2.0 * (std::f64::consts::PI / n as f64).sin()).powi(3);
    let expected = (amp * factor).powi(2) / 2.0;
    assert!((l - expected).abs() <= 1e-12 * expected, "{l} vs {expected}");

    let quad: Vec<Vec<Vec3>> = (0..n)
        .map(|t| {
            let t = t as f64;
            (0..v).map(|i| [1.0 + 2.0 * t, i as f64 - 0.5 * t * t, 3.0]).collect()
        })
        .collect();
    let (l, _) = temporal_jerk_loss(&sequence(quad), false).unwrap();
    assert!(l.abs() < 1e-20);
}

#[test]
fn jerk_gradient_matches_central_differences() {
    let mut r = rng(4);
    let frames: Vec<Vec<Vec3>> = (0..6)
        .map(|_| (0..12).map(|_| [r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0)]).collect())
        .collect();
    for cyclic in [true, false] {
        let seq = sequence(frames.clone());
        let (_, g) = temporal_jerk_loss(&seq, cyclic).unwrap();
        for t in 0..6 {
            for i in 0..12 {
                for k in 0..3 {
                    let f = |v: &[Vec3]| {
                        let mut fr = frames.clone();
                        fr[t] = v.to_vec();
                        jerk_brute(&fr, cyclic)
                    };
                    let num = central_difference(&frames[t], i, k, 1e-3, f);
                    assert!(grad_ok(g[t][i][k], num, 1e-6, 1e-8), "t{t} v{i}[{k}]: {} vs {num}", g[t][i][k]);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn regularizers_nonnegative_and_rigid_invariant(seed in 0u64..10_000, jitter in 0.0..2.0f64) {
        let template = jittered_icosphere(1, 8.0, 0.0, 0);
        let edges = build_edge_list(&template);
        let pairs = FacePairs::build(template.faces());
        let mut r = rng(seed);
        let verts: Vec<Vec3> = template.vertices().iter().map(|p| p.map(|x| x + jitter * r.gen_range(-1.0..1.0))).collect();
        let rigid = Rigid::random(&mut r, 40.0);
        let moved: Vec<Vec3> = verts.iter().map(|p| rigid.apply_point(p)).collect();

        let (e0, _) = edge_loss(&verts, &edges);
        let (e1, _) = edge_loss(&moved, &edges);
        let (n0, _) = normal_loss(&verts, template.faces(), &pairs).unwrap();
        let (n1, _) = normal_loss(&moved, template.faces(), &pairs).unwrap();
        prop_assert!(e0 >= 0.0 && n0 >= 0.0);
        prop_assert!((e0 - e1).abs() <= 1e-9 * e0.max(1e-12) + 1e-18);
        prop_assert!((n0 - n1).abs() <= 1e-9 * n0.max(1e-12) + 1e-15);
    }

    #[test]
    fn static_sequence_has_zero_jerk(seed in 0u64..1000, n in 4usize..10) {
        let mesh = torus(3, 4, 5.0, 1.0, 0.5, seed);
        let (l, g) = temporal_jerk_loss(&MeshSequence::repeat(&mesh, n), true).unwrap();
        prop_assert_eq!(l, 0.0);
        prop_assert!(g.iter().flatten().flatten().all(|&x| x == 0.0));
    }
}
