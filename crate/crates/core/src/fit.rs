//! Total objective, direct per-vertex fitting and the gradient-check harness.
//!
//! The objective is
//!
//! ```text
//! λ_MSE·L_MSE + λ_DR·L_DR + λ_edge·L_edge + λ_norm·L_norm + λ_temp·L_temp
//! ```
//!
//! where `L_DR`, `L_edge` and `L_norm` are averaged over frames, `L_MSE` is
//! only present when a reference sequence is supplied and `L_temp` only for
//! sequences of at least four frames.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{build_edge_list, EdgeList, LabeledMesh, MeshSequence};
use crate::optim::Adam;
use crate::plane::PlaneFrame;
use crate::regularize::{edge_loss_into, jerk_into, normal_loss_into, FacePairs, RegularizerWeights};
use crate::render::{frame_render_loss, plane_loss, smooth_along, Observations, RendererConfig, Scratch, ViewObservation};
use crate::vec3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

/// Fitting configuration. Serialized as a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Weight of the vertex MSE term; inactive without a reference sequence.
    pub lambda_mse: f64,
    pub lambda_dr: f64,
    pub lambda_edge: f64,
    pub lambda_norm: f64,
    pub lambda_temp: f64,
    /// Whether the jerk stencil wraps from the last frame to the first.
    pub cyclic: bool,
    pub renderer: RendererConfig,
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let reg = RegularizerWeights::default();
        FitConfig {
            lambda_mse: 10.0,
            lambda_dr: 5.0,
            lambda_edge: reg.lambda_edge,
            lambda_norm: reg.lambda_norm,
            lambda_temp: reg.lambda_temp,
            cyclic: true,
            renderer: RendererConfig::default(),
            steps: 2000,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn regularizers(&self) -> RegularizerWeights {
        RegularizerWeights {
            lambda_edge: self.lambda_edge,
            lambda_norm: self.lambda_norm,
            lambda_temp: self.lambda_temp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_mse", self.lambda_mse), ("lambda_dr", self.lambda_dr)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        self.regularizers().validate()?;
        self.renderer
            .validate()
            .map_err(|e| match e {
                Error::Config { field, msg } => Error::Config {
                    field: format!("renderer.{field}"),
                    msg,
                },
                other => other,
            })?;
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(name, format!("must lie in [0, 1), got {v}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        Ok(())
    }

    fn weight(&self, term: Term) -> f64 {
        match term {
            Term::Mse => self.lambda_mse,
            Term::Dr => self.lambda_dr,
            Term::Edge => self.lambda_edge,
            Term::Norm => self.lambda_norm,
            Term::Temp => self.lambda_temp,
        }
    }
}

/// One loss term of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Mse,
    Dr,
    Edge,
    Norm,
    Temp,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Mse, Term::Dr, Term::Edge, Term::Norm, Term::Temp];

    pub fn as_str(self) -> &'static str {
        match self {
            Term::Mse => "mse",
            Term::Dr => "dr",
            Term::Edge => "edge",
            Term::Norm => "norm",
            Term::Temp => "temp",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Unweighted term values. `None` marks a term that does not apply to the
/// problem, which is different from a term that evaluates to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: Option<f64>,
    pub dr: f64,
    pub edge: f64,
    pub norm: f64,
    pub temp: Option<f64>,
}

impl LossBreakdown {
    pub fn get(&self, term: Term) -> Option<f64> {
        match term {
            Term::Mse => self.mse,
            Term::Dr => Some(self.dr),
            Term::Edge => Some(self.edge),
            Term::Norm => Some(self.norm),
            Term::Temp => self.temp,
        }
    }

    /// Weighted sum under `config`'s weights.
    pub fn total(&self, config: &FitConfig) -> f64 {
        Term::ALL
            .iter()
            .filter_map(|&t| self.get(t).map(|v| config.weight(t) * v))
            .sum()
    }
}

/// Everything a fit needs besides its configuration.
#[derive(Debug, Clone)]
pub struct FitProblem {
    /// Rest geometry for edge lengths; shares connectivity with `init`.
    pub template: LabeledMesh,
    pub edges: EdgeList,
    pub face_pairs: FacePairs,
    pub planes: Vec<PlaneFrame>,
    pub observations: Observations,
    /// Vertex-corresponding ground truth for the MSE term.
    pub reference: Option<MeshSequence>,
    pub init: MeshSequence,
}

impl FitProblem {
    pub fn new(
        template: LabeledMesh,
        planes: Vec<PlaneFrame>,
        observations: Vec<ViewObservation>,
        init: MeshSequence,
        reference: Option<MeshSequence>,
    ) -> Result<Self> {
        if init.faces() != template.faces() || init.labels() != template.labels() {
            return Err(Error::Shape("initial sequence and template differ in connectivity".into()));
        }
        if let Some(r) = &reference {
            check_same_shape(&init, r)?;
        }
        let observations = Observations::new(&planes, init.frame_count(), observations)?;
        let edges = build_edge_list(&template);
        let face_pairs = FacePairs::build(template.faces());
        Ok(FitProblem {
            template,
            edges,
            face_pairs,
            planes,
            observations,
            reference,
            init,
        })
    }
}

pub(crate) fn check_same_shape(a: &MeshSequence, b: &MeshSequence) -> Result<()> {
    if a.frame_count() != b.frame_count() || a.vertex_count() != b.vertex_count() {
        return Err(Error::Shape(format!(
            "sequences differ: {} frames × {} vertices vs {} frames × {} vertices",
            a.frame_count(),
            a.vertex_count(),
            b.frame_count(),
            b.vertex_count()
        )));
    }
    Ok(())
}

/// Mean over frames, vertices and coordinates of the squared error. The
/// gradient is `2(pred − ref)/(N·V·3)`.
pub fn mse_loss(pred: &MeshSequence, reference: &MeshSequence) -> Result<(f64, Vec<Vec<Vec3>>)> {
    check_same_shape(pred, reference)?;
    let mut grad = vec![vec![[0.0; 3]; pred.vertex_count()]; pred.frame_count()];
    let l = mse_into(pred.frames(), reference.frames(), &mut grad, 1.0);
    Ok((l, grad))
}

fn mse_into(pred: &[Vec<Vec3>], reference: &[Vec<Vec3>], grad: &mut [Vec<Vec3>], scale: f64) -> f64 {
    let count = pred.len() * pred.first().map_or(0, Vec::len) * 3;
    if count == 0 {
        return 0.0;
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for ((p, r), g) in pred.iter().zip(reference).zip(grad.iter_mut()) {
        for ((a, b), gi) in p.iter().zip(r).zip(g.iter_mut()) {
            for k in 0..3 {
                let d = a[k] - b[k];
                sum += d * d;
                gi[k] += scale * 2.0 * d * inv;
            }
        }
    }
    sum * inv
}

fn all_finite(g: &[Vec3]) -> bool {
    g.iter().flatten().all(|x| x.is_finite())
}

fn evaluate(frames: &[Vec<Vec3>], problem: &FitProblem, config: &FitConfig, step: usize) -> Result<(f64, Vec<Vec<Vec3>>, LossBreakdown)> {
    let n = frames.len();
    if n != problem.init.frame_count() {
        return Err(Error::Shape(format!("{n} frames, problem has {}", problem.init.frame_count())));
    }
    let inv_n = 1.0 / n as f64;
    let faces = problem.template.faces();
    let per_frame: Vec<Result<([f64; 3], Vec<Vec3>)>> = frames
        .par_iter()
        .enumerate()
        .map(|(t, verts)| {
            let mut g = vec![[0.0; 3]; verts.len()];
            let mut scratch = Scratch::new();
            let non_finite = |term: Term| Error::NonFinite {
                step,
                term: term.to_string(),
            };
            let dr = frame_render_loss(
                verts,
                &problem.planes,
                problem.observations.frame(t),
                &config.renderer,
                Some((&mut g, config.lambda_dr * inv_n)),
                &mut scratch,
            );
            if !dr.is_finite() || !all_finite(&g) {
                return Err(non_finite(Term::Dr));
            }
            let edge = edge_loss_into(verts, &problem.edges, &mut g, config.lambda_edge * inv_n);
            if !edge.is_finite() || !all_finite(&g) {
                return Err(non_finite(Term::Edge));
            }
            let norm = match normal_loss_into(verts, faces, &problem.face_pairs, &mut g, config.lambda_norm * inv_n) {
                Ok(v) => v,
                Err(Error::ZeroAreaFace { .. }) => return Err(non_finite(Term::Norm)),
                Err(e) => return Err(e),
            };
            if !norm.is_finite() || !all_finite(&g) {
                return Err(non_finite(Term::Norm));
            }
            Ok(([dr, edge, norm], g))
        })
        .collect();

    let mut sums = [0.0; 3];
    let mut grads = Vec::with_capacity(n);
    for r in per_frame {
        let (v, g) = r?;
        for k in 0..3 {
            sums[k] += v[k];
        }
        grads.push(g);
    }
    let [dr, edge, norm] = sums.map(|s| s * inv_n);

    let temp = if n >= 4 {
        let v = jerk_into(frames, config.cyclic, &mut grads, config.lambda_temp);
        if !v.is_finite() || !grads.iter().all(|g| all_finite(g)) {
            return Err(Error::NonFinite {
                step,
                term: Term::Temp.to_string(),
            });
        }
        Some(v)
    } else {
        None
    };
    let mse = match &problem.reference {
        Some(r) => {
            let v = mse_into(frames, r.frames(), &mut grads, config.lambda_mse);
            if !v.is_finite() || !grads.iter().all(|g| all_finite(g)) {
                return Err(Error::NonFinite {
                    step,
                    term: Term::Mse.to_string(),
                });
            }
            Some(v)
        }
        None => None,
    };
    let breakdown = LossBreakdown {
        mse,
        dr,
        edge,
        norm,
        temp,
    };
    Ok((breakdown.total(config), grads, breakdown))
}

/// Weighted objective at `pred`, its gradient and the unweighted terms.
/// Non-finite values are reported with step 0.
pub fn total_loss(
    pred: &MeshSequence,
    problem: &FitProblem,
    config: &FitConfig,
) -> Result<(f64, Vec<Vec<Vec3>>, LossBreakdown)> {
    config.validate()?;
    if pred.faces() != problem.template.faces() {
        return Err(Error::Shape("prediction and template differ in connectivity".into()));
    }
    evaluate(pred.frames(), problem, config, 0)
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub total: f64,
    pub terms: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    /// Loss evaluated before each update; one row per step.
    pub trace: Vec<TraceRow>,
    /// Loss after the last update.
    pub final_loss: TraceRow,
    pub sequence: MeshSequence,
    pub wall_time_s: f64,
    /// Relative change of the total loss over the last 50 steps below 1e−6.
    pub converged: bool,
}

impl FitReport {
    /// Final total strictly below the initial total.
    pub fn descended(&self) -> bool {
        self.trace.first().is_some_and(|first| self.final_loss.total < first.total)
    }

    /// CSV with columns `step,total,mse,dr,edge,norm,temp`; the final
    /// post-update evaluation is the last row. Inapplicable terms read `NA`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,total,mse,dr,edge,norm,temp\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"));
        for row in self.trace.iter().chain(std::iter::once(&self.final_loss)) {
            out.push_str(&format!(
                "{},{:?},{},{:?},{:?},{:?},{}\n",
                row.step,
                row.total,
                opt(row.terms.mse),
                row.terms.dr,
                row.terms.edge,
                row.terms.norm,
                opt(row.terms.temp)
            ));
        }
        out
    }
}

/// Adam descent on the vertex positions of every frame, starting from
/// `problem.init`. Always runs `config.steps` updates.
pub fn fit(problem: &FitProblem, config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    let start = Instant::now();
    let mut frames = problem.init.frames().to_vec();
    let len = frames.len() * problem.init.vertex_count() * 3;
    let mut adam = Adam::new(len, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (total, grads, terms) = evaluate(&frames, problem, config, step)?;
        trace.push(TraceRow { step, total, terms });
        adam.step(
            frames.iter_mut().flatten().flatten(),
            grads.iter().flatten().flatten(),
        );
    }
    let (total, _, terms) = evaluate(&frames, problem, config, config.steps)?;
    let final_loss = TraceRow {
        step: config.steps,
        total,
        terms,
    };
    let converged = config.steps >= 50 && {
        let before = trace[config.steps - 50].total;
        (total - before).abs() <= 1e-6 * before.abs()
    };
    Ok(FitReport {
        trace,
        final_loss,
        sequence: problem.init.with_frames(frames)?,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    /// Coordinates sampled per term.
    pub n_coords: usize,
    /// Central-difference step, mm.
    pub step: f64,
    /// Maximum relative error.
    pub tolerance: f64,
    /// Maximum absolute error where the analytic derivative is below 1e−10.
    pub abs_tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            n_coords: 200,
            step: 1e-3,
            tolerance: 1e-4,
            abs_tolerance: 1e-8,
            seed: 0,
        }
    }
}

/// Result for one term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermCheck {
    pub term: Term,
    pub checked: usize,
    /// Samples redrawn because the difference stencil straddled a kink of
    /// the rendering loss.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub terms: Vec<TermCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.terms.iter().all(|t| t.passed)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<6} {:>8} {:>8} {:>14} {:>14}  status\n", "term", "checked", "skipped", "max_rel_err", "max_abs_err");
        for t in &self.terms {
            s.push_str(&format!(
                "{:<6} {:>8} {:>8} {:>14.3e} {:>14.3e}  {}\n",
                t.term.as_str(),
                t.checked,
                t.skipped,
                t.max_rel_error,
                t.max_abs_error,
                if t.passed { "ok" } else { "FAIL" }
            ));
        }
        s
    }
}

/// Compares analytic gradients of each applicable term, evaluated at
/// `problem.init`, against central differences on randomly drawn coordinates.
pub fn gradcheck(problem: &FitProblem, config: &FitConfig, options: &GradcheckOptions) -> Result<GradcheckReport> {
    if !(options.step > 0.0 && options.step.is_finite()) {
        return Err(Error::config("step", "must be positive"));
    }
    if options.n_coords == 0 {
        return Err(Error::config("n_coords", "must be at least 1"));
    }
    config.renderer.validate()?;
    let frames = problem.init.frames();
    let n = frames.len();
    let v = problem.init.vertex_count();
    let faces = problem.template.faces();
    let inv_n = 1.0 / n as f64;
    let h = options.step;

    let mut terms = Vec::new();
    for term in Term::ALL {
        let applicable = match term {
            Term::Mse => problem.reference.is_some(),
            Term::Temp => n >= 4,
            _ => true,
        };
        if !applicable {
            continue;
        }
        let analytic = term_gradient(term, frames, problem, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ (term as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut check = TermCheck {
            term,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            passed: true,
        };
        let max_draws = options.n_coords * 100;
        let mut draws = 0;
        while check.checked < options.n_coords && draws < max_draws {
            draws += 1;
            let (t, i, k) = (rng.gen_range(0..n), rng.gen_range(0..v), rng.gen_range(0..3));
            if term == Term::Dr && !smooth_along(&frames[t][i], k, h, &problem.planes, &config.renderer) {
                check.skipped += 1;
                continue;
            }
            let eval = |delta: f64| -> Result<f64> {
                let mut moved = frames[t].clone();
                moved[i][k] += delta;
                Ok(match term {
                    Term::Dr => {
                        // Planes where the vertex has no influence contribute identically to both sides.
                        let mut scratch = Scratch::new();
                        problem
                            .planes
                            .iter()
                            .zip(problem.observations.frame(t))
                            .map(|(plane, obs)| plane_loss(&moved, plane, obs, &config.renderer, None, &mut scratch))
                            .sum::<f64>()
                            * inv_n
                    }
                    Term::Edge => edge_loss_into(&moved, &problem.edges, &mut vec![[0.0; 3]; v], 0.0) * inv_n,
                    Term::Norm => normal_loss_into(&moved, faces, &problem.face_pairs, &mut vec![[0.0; 3]; v], 0.0)? * inv_n,
                    Term::Temp | Term::Mse => {
                        let mut all = frames.to_vec();
                        all[t] = moved;
                        let mut sink = vec![vec![[0.0; 3]; v]; n];
                        if term == Term::Temp {
                            jerk_into(&all, config.cyclic, &mut sink, 0.0)
                        } else {
                            let r = problem.reference.as_ref().expect("applicable");
                            mse_into(&all, r.frames(), &mut sink, 0.0)
                        }
                    }
                })
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let a = analytic[t][i][k];
            let err = (a - numeric).abs();
            if a.abs() >= 1e-10 {
                check.max_rel_error = check.max_rel_error.max(err / a.abs());
            } else {
                check.max_abs_error = check.max_abs_error.max(err);
            }
            check.checked += 1;
        }
        check.passed = check.checked == options.n_coords
            && check.max_rel_error < options.tolerance
            && check.max_abs_error < options.abs_tolerance;
        terms.push(check);
    }
    Ok(GradcheckReport { terms })
}

/// Gradient of a single unweighted term.
fn term_gradient(term: Term, frames: &[Vec<Vec3>], problem: &FitProblem, config: &FitConfig) -> Result<Vec<Vec<Vec3>>> {
    let n = frames.len();
    let v = problem.init.vertex_count();
    let inv_n = 1.0 / n as f64;
    let mut grads = vec![vec![[0.0; 3]; v]; n];
    match term {
        Term::Mse => {
            let r = problem.reference.as_ref().ok_or_else(|| Error::Invalid("no reference sequence".into()))?;
            mse_into(frames, r.frames(), &mut grads, 1.0);
        }
        Term::Temp => {
            jerk_into(frames, config.cyclic, &mut grads, 1.0);
        }
        _ => {
            let mut scratch = Scratch::new();
            for (t, (verts, g)) in frames.iter().zip(grads.iter_mut()).enumerate() {
                match term {
                    Term::Dr => {
                        frame_render_loss(
                            verts,
                            &problem.planes,
                            problem.observations.frame(t),
                            &config.renderer,
                            Some((g, inv_n)),
                            &mut scratch,
                        );
                    }
                    Term::Edge => {
                        edge_loss_into(verts, &problem.edges, g, inv_n);
                    }
                    _ => {
                        normal_loss_into(verts, problem.template.faces(), &problem.face_pairs, g, inv_n)?;
                    }
                }
            }
        }
    }
    Ok(grads)
}
