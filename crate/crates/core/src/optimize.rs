//! Direct shape optimization: move a point cloud (and optionally its
//! weights) downhill on the matching loss against a fixed target.

use std::io::Write;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::loss::{total_gradient, LossConfig};
use crate::rotation::UnitQuaternion;
use crate::zernike::{project_moments, MomentTensor, ZernikeBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// Start each alignment from the previous step's optimum.
    Previous,
    /// Fresh multi-start alignment every step.
    Fresh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterOptimizer {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    pub lr_points: f64,
    pub lr_weights: f64,
    /// Stop once the loss falls below this.
    pub stop_loss: f64,
    pub max_steps: usize,
    pub optimize_weights: bool,
    pub warm_start: WarmStart,
    pub optimizer: OuterOptimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Keep a copy of the cloud every this many steps (0 disables).
    pub snapshot_every: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            lr_points: 5e-2,
            lr_weights: 5e-2,
            stop_loss: 5e-5,
            max_steps: 10_000,
            optimize_weights: false,
            warm_start: WarmStart::Previous,
            optimizer: OuterOptimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            snapshot_every: 0,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("optimize: {m}")));
        if !(self.lr_points > 0.0 && self.lr_weights > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.stop_loss > 0.0) {
            return bad("stop_loss must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return bad("ADAM parameters out of range");
        }
        Ok(())
    }
}

/// Bias-corrected ADAM moments for a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One ADAM update of `params` in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(state.m.len(), grads.len());
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub spectral_mse: f64,
    pub com_penalty: f64,
    pub q_star: UnitQuaternion,
    pub inner_iterations: usize,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub cloud: PointCloud,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub final_cloud: PointCloud,
    pub converged: bool,
}

impl Trajectory {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// One JSON object per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Learning curve as CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record([
            "step",
            "loss",
            "spectral_mse",
            "com_penalty",
            "inner_iterations",
            "grad_norm",
        ])
        .map_err(io)?;
        for r in &self.records {
            out.write_record([
                r.step.to_string(),
                format!("{:e}", r.loss),
                format!("{:e}", r.spectral_mse),
                format!("{:e}", r.com_penalty),
                r.inner_iterations.to_string(),
                format!("{:e}", r.grad_norm),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Target spectrum and normalization radius, computed once per run.
#[derive(Clone, Debug)]
pub struct PreparedTarget {
    pub moments: MomentTensor,
    pub r_max: f64,
}

/// Moments of the centered target normalized by its own largest radius.
pub fn prepare_target(basis: &ZernikeBasis, target: &PointCloud) -> Result<PreparedTarget> {
    let n = target.normalize_self()?;
    let moments = project_moments(basis, &n)?;
    Ok(PreparedTarget {
        moments,
        r_max: n.scale,
    })
}

/// Optimize `x0` toward `target`. Step `s` evaluates the loss at the current
/// cloud; the run stops there if the loss is below `cfg.stop_loss`,
/// otherwise one outer update is applied.
pub fn direct_optimize(
    basis: &ZernikeBasis,
    x0: &PointCloud,
    target: &PreparedTarget,
    cfg: &OptimizeConfig,
    loss_cfg: &LossConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let n = x0.len();
    let (points, mut weights) = x0.clone().into_parts();
    let mut flat: Vec<f64> = points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    let mut adam_x = AdamState::new(3 * n);
    let mut adam_w = AdamState::new(n);
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut warm: Option<UnitQuaternion> = None;
    let cloud_of = |flat: &[f64], w: &[f64]| {
        let pts = flat
            .chunks_exact(3)
            .map(|c| Point::new(c[0], c[1], c[2]))
            .collect();
        PointCloud::new(pts, w.to_vec())
    };
    let mut converged = false;
    for step in 1..=cfg.max_steps {
        let cloud = match cloud_of(&flat, &weights) {
            Ok(c) => c,
            Err(_) => {
                return Err(Error::OptimizationDiverged {
                    step,
                    losses: records.iter().map(|r: &StepRecord| r.loss).collect(),
                })
            }
        };
        if cfg.snapshot_every > 0 && (step - 1) % cfg.snapshot_every == 0 {
            snapshots.push(Snapshot {
                step,
                cloud: cloud.clone(),
            });
        }
        let step_cfg = LossConfig {
            seed: loss_cfg.seed.wrapping_add(step as u64),
            ..loss_cfg.clone()
        };
        let g = total_gradient(
            basis,
            &cloud,
            &target.moments,
            target.r_max,
            &step_cfg,
            warm,
        )?;
        if !g.value.is_finite() {
            return Err(Error::OptimizationDiverged {
                step,
                losses: records.iter().map(|r| r.loss).collect(),
            });
        }
        if cfg.warm_start == WarmStart::Previous {
            warm = Some(g.q_star);
        }
        records.push(StepRecord {
            step,
            loss: g.value,
            spectral_mse: g.spectral_mse,
            com_penalty: g.com_penalty,
            q_star: g.q_star,
            inner_iterations: g.alignment_iterations,
            grad_norm: g.norm(),
        });
        if g.value < cfg.stop_loss {
            converged = true;
            break;
        }
        let gx: Vec<f64> = g.grad_points.iter().flatten().copied().collect();
        match cfg.optimizer {
            OuterOptimizer::Adam => {
                adam_step(
                    &mut adam_x,
                    &mut flat,
                    &gx,
                    cfg.lr_points,
                    cfg.beta1,
                    cfg.beta2,
                    cfg.epsilon,
                );
                if cfg.optimize_weights {
                    adam_step(
                        &mut adam_w,
                        &mut weights,
                        &g.grad_weights,
                        cfg.lr_weights,
                        cfg.beta1,
                        cfg.beta2,
                        cfg.epsilon,
                    );
                }
            }
            OuterOptimizer::Sgd => {
                flat.iter_mut()
                    .zip(&gx)
                    .for_each(|(p, d)| *p -= cfg.lr_points * d);
                if cfg.optimize_weights {
                    weights
                        .iter_mut()
                        .zip(&g.grad_weights)
                        .for_each(|(p, d)| *p -= cfg.lr_weights * d);
                }
            }
        }
    }
    let final_cloud = cloud_of(&flat, &weights)?;
    Ok(Trajectory {
        records,
        snapshots,
        final_cloud,
        converged,
    })
}

/// Principal axes of the centered cloud, as columns ordered by decreasing
/// variance.
pub fn principal_axes(cloud: &PointCloud) -> Matrix3<f64> {
    let com = cloud.center_of_mass();
    let mut cov = Matrix3::zeros();
    for p in cloud.points() {
        let d = p - com;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / cloud.len() as f64);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ])
}

/// Angle in degrees between two unsigned axes.
pub fn axis_angle_deg(a: &Point, b: &Point) -> f64 {
    let c = (a.dot(b).abs() / (a.norm() * b.norm())).min(1.0);
    c.acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::{Rng, SeedableRng};

    /// Second ADAM, written against the textbook recurrences.
    fn reference_adam(steps: &[Vec<f64>], x0: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut x = x0.to_vec();
        let mut m = vec![0.0; x.len()];
        let mut v = vec![0.0; x.len()];
        for (t, g) in steps.iter().enumerate() {
            let t = (t + 1) as i32;
            for i in 0..x.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i].powi(2);
                x[i] -=
                    lr * (m[i] / (1.0 - b1.powi(t))) / ((v[i] / (1.0 - b2.powi(t))).sqrt() + eps);
            }
        }
        x
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut s = AdamState::new(3);
        let mut x = vec![1.0, -2.0, 3.0];
        adam_step(&mut s, &mut x, &[0.0; 3], 0.1, 0.9, 0.999, 1e-8);
        assert_eq!(x, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let mut s = AdamState::new(2);
        let mut x = vec![0.0, 0.0];
        let mut last = x.clone();
        for _ in 0..500 {
            adam_step(&mut s, &mut x, &[3.0, -0.01], 0.01, 0.9, 0.999, 1e-8);
            let d = [x[0] - last[0], x[1] - last[1]];
            assert!((d[0] + 0.01).abs() < 1e-6 && (d[1] - 0.01).abs() < 1e-5);
            last = x.clone();
        }
    }

    #[test]
    fn adam_matches_reference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x0: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let steps: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..7).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut s = AdamState::new(7);
        let mut x = x0.clone();
        for g in &steps {
            adam_step(&mut s, &mut x, g, 0.03, 0.9, 0.999, 1e-8);
        }
        let r = reference_adam(&steps, &x0, 0.03);
        for (a, b) in x.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn already_optimal_stops_at_first_step() {
        let b = ZernikeBasis::new(6, 4).unwrap();
        let t = fixtures::bunny(200, 2).unwrap();
        let t = t.translate(&-t.center_of_mass());
        let prep = prepare_target(&b, &t).unwrap();
        let traj = direct_optimize(
            &b,
            &t,
            &prep,
            &OptimizeConfig::default(),
            &LossConfig::default(),
        )
        .unwrap();
        assert!(traj.converged);
        assert_eq!(traj.records.len(), 1);
        assert!(traj.final_loss() < 5e-5);
    }

    #[test]
    fn short_run_decreases_loss_and_is_deterministic() {
        let b = ZernikeBasis::new(6, 4).unwrap();
        let t = fixtures::crescent(&fixtures::CrescentSpec {
            n: 300,
            ..Default::default()
        })
        .unwrap();
        let prep = prepare_target(&b, &t).unwrap();
        let x0 = fixtures::ellipsoid(150, [1.0, 1.0, 2.0], 3).unwrap();
        let cfg = OptimizeConfig {
            max_steps: 40,
            stop_loss: 1e-12,
            snapshot_every: 10,
            ..Default::default()
        };
        let a = direct_optimize(&b, &x0, &prep, &cfg, &LossConfig::default()).unwrap();
        let c = direct_optimize(&b, &x0, &prep, &cfg, &LossConfig::default()).unwrap();
        assert_eq!(a, c);
        assert!(a.final_loss() < 0.5 * a.records[0].loss);
        assert_eq!(a.snapshots.len(), 4);
        let mut buf = Vec::new();
        a.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 40);
    }

    #[test]
    fn principal_axes_of_ellipsoid() {
        let e = fixtures::ellipsoid(4000, [0.5, 3.0, 1.0], 4).unwrap();
        let ax = principal_axes(&e);
        assert!(axis_angle_deg(&ax.column(0).into_owned(), &Point::y()) < 3.0);
        assert!(axis_angle_deg(&ax.column(2).into_owned(), &Point::x()) < 3.0);
    }
}
