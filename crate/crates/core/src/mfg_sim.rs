//! Particle simulation of the mean-field equilibrium.
//!
//! Paths are stored step-major: the states of all particles at grid index `k`
//! occupy `x[k * M .. (k + 1) * M]`. Noise is regenerated on demand from the
//! counter-based generator, so an ensemble only has to remember its seed to
//! replay the Brownian increments that drove it.
//!
//! With frozen population curves the drift is affine in the state and each
//! step is sampled exactly:
//!
//! ```text
//! X_{k+1} = e^{alpha dt} X_k + ∫ e^{alpha (t_{k+1} - s)} src(s) ds + sigma ∫ e^{alpha (t_{k+1} - s)} dW_s
//! ```
//!
//! where the stochastic integral is drawn jointly with the increment `ΔW`.
//! Interacting particles (empirical moments in the drift) use Euler-Maruyama.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::closed_form::{ContractSpec, MomentCurves, PolicyPair};
use crate::error::{Error, Result};
use crate::exec::{Execution, CHUNK};
use crate::export::fmt_f64;
use crate::hamiltonian::cost;
use crate::model::{DeterministicCurve, MeanFieldModel, RiskAversePenalties, TimeGrid};
use crate::quad::expm1_ratio;
use crate::rng::{CounterRng, Stream};
use crate::stats::summarize;

/// Population curves used in the drift.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanFieldMode {
    /// Mean and variance taken from supplied deterministic curves.
    #[default]
    Analytic,
    /// Mean and variance re-estimated from the particles at every step.
    Particle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub particles: usize,
    pub grid: TimeGrid,
    pub seed: u64,
    pub mode: MeanFieldMode,
    pub execution: Execution,
}

impl SimConfig {
    pub fn new(particles: usize, grid: TimeGrid, seed: u64) -> Result<Self> {
        if particles < 2 {
            return Err(Error::invalid("particles", "particles must be at least 2"));
        }
        Ok(Self {
            particles,
            grid,
            seed,
            mode: MeanFieldMode::Analytic,
            execution: Execution::default(),
        })
    }

    pub fn with_mode(mut self, mode: MeanFieldMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Monte Carlo estimate as emitted to JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub standard_error: f64,
    pub particles: usize,
    pub seed: u64,
}

impl Estimate {
    /// `|value - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        let gap = (self.value - target).abs();
        if self.standard_error > 0.0 {
            gap / self.standard_error
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// True when `|value - target| <= k SE + slack`.
    pub fn within(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.value - target).abs() <= k * self.standard_error + slack
    }
}

/// Bundle of simulated paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    grid: TimeGrid,
    particles: usize,
    x: Vec<f64>,
    y: Option<Vec<f64>>,
    pub realized_mean: DeterministicCurve,
    pub realized_second_moment: DeterministicCurve,
    /// Effort used by every particle; unknown for ensembles read from disk.
    pub effort: Option<DeterministicCurve>,
    noise_seed: Option<u64>,
    execution: Execution,
}

impl ParticleEnsemble {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    /// States of all particles at grid index `k`.
    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.particles..(k + 1) * self.particles]
    }

    pub fn y_at(&self, k: usize) -> Option<&[f64]> {
        self.y
            .as_ref()
            .map(|y| &y[k * self.particles..(k + 1) * self.particles])
    }

    pub fn terminal_x(&self) -> &[f64] {
        self.x_at(self.grid.steps())
    }

    pub fn terminal_y(&self) -> Option<&[f64]> {
        self.y_at(self.grid.steps())
    }

    /// Full path of particle `i`.
    pub fn x_path(&self, i: usize) -> Vec<f64> {
        (0..self.grid.len()).map(|k| self.x[k * self.particles + i]).collect()
    }

    pub fn has_noise(&self) -> bool {
        self.noise_seed.is_some()
    }

    /// Writes `path,t,x,y` rows for the first `max_paths` particles (all of
    /// them when `None`). `y` is left empty when it was not simulated.
    pub fn write_csv(&self, path: &Path, max_paths: Option<usize>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "path,t,x,y")?;
        let count = max_paths.unwrap_or(self.particles).min(self.particles);
        for i in 0..count {
            for k in 0..self.grid.len() {
                let x = self.x[k * self.particles + i];
                let y = self
                    .y
                    .as_ref()
                    .map(|y| fmt_f64(y[k * self.particles + i]))
                    .unwrap_or_default();
                writeln!(w, "{i},{},{},{y}", fmt_f64(self.grid.point(k)), fmt_f64(x))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an ensemble written by [`ParticleEnsemble::write_csv`].
    ///
    /// The file does not carry the Brownian increments, so the result cannot
    /// be extended with [`simulate_continuation_utility`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "path,t,x,y" {
            return Err(Error::Parse(format!("unexpected ensemble header `{header}`")));
        }
        let mut rows: Vec<(usize, f64, f64, Option<f64>)> = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(Error::Parse(format!("line {}: expected 4 columns", n + 2)));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))
            };
            let id = cols[0]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))?;
            let y = if cols[3].trim().is_empty() {
                None
            } else {
                Some(num(cols[3])?)
            };
            rows.push((id, num(cols[1])?, num(cols[2])?, y));
        }
        let particles = rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1);
        if particles < 2 || !rows.len().is_multiple_of(particles) {
            return Err(Error::Parse("ensemble must hold at least two complete paths".into()));
        }
        let points = rows.len() / particles;
        let horizon = rows[points - 1].1;
        let grid = TimeGrid::new(horizon, points - 1);
        if grid.len() != points {
            return Err(Error::Parse("time column is not a uniform grid".into()));
        }
        let mut x = vec![0.0; rows.len()];
        let has_y = rows.iter().all(|r| r.3.is_some());
        let mut y = vec![0.0; if has_y { rows.len() } else { 0 }];
        for (idx, &(id, t, xv, yv)) in rows.iter().enumerate() {
            let k = idx % points;
            if id != idx / points || (t - grid.point(k)).abs() > 1e-9 * (1.0 + horizon) {
                return Err(Error::Parse(format!("row {} out of order", idx + 2)));
            }
            x[k * particles + id] = xv;
            if has_y {
                y[k * particles + id] = yv.unwrap_or_default();
            }
        }
        let (realized_mean, realized_second_moment) = realized_moments(&x, particles, grid, Execution::Sequential);
        Ok(Self {
            grid,
            particles,
            x,
            y: has_y.then_some(y),
            realized_mean,
            realized_second_moment,
            effort: None,
            noise_seed: None,
            execution: Execution::default(),
        })
    }
}

/// Mean and centred second moment of a slice, reduced in fixed chunks.
fn slice_moments(xs: &[f64], exec: Execution) -> (f64, f64) {
    let n = xs.len() as f64;
    let sum: f64 = exec
        .map_chunks(xs.len(), CHUNK, |r| xs[r].iter().sum::<f64>())
        .into_iter()
        .sum();
    let mean = sum / n;
    let ss: f64 = exec
        .map_chunks(xs.len(), CHUNK, |r| {
            xs[r].iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
        })
        .into_iter()
        .sum();
    (mean, ss / n)
}

fn realized_moments(
    x: &[f64],
    particles: usize,
    grid: TimeGrid,
    exec: Execution,
) -> (DeterministicCurve, DeterministicCurve) {
    let mut mean = Vec::with_capacity(grid.len());
    let mut second = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let (m, v) = slice_moments(&x[k * particles..(k + 1) * particles], exec);
        mean.push(m);
        second.push(v + m * m);
    }
    (
        DeterministicCurve::new(grid, mean).expect("finite particle means"),
        DeterministicCurve::new(grid, second).expect("finite particle second moments"),
    )
}

/// Three-point Simpson rule on `[a, b]`.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

/// Per-step coefficients of the exact affine transition.
struct ExactStep {
    decay: f64,
    sqrt_dt: f64,
    /// `I = coef ΔW + resid ζ` reproduces `Cov(ΔW, I)` and `Var(I)`.
    coef: f64,
    resid: f64,
}

impl ExactStep {
    fn new(alpha: f64, dt: f64) -> Self {
        if dt == 0.0 {
            return Self {
                decay: 1.0,
                sqrt_dt: 0.0,
                coef: 0.0,
                resid: 0.0,
            };
        }
        let e1 = expm1_ratio(alpha, dt);
        let e2 = expm1_ratio(2.0 * alpha, dt);
        Self {
            decay: (alpha * dt).exp(),
            sqrt_dt: dt.sqrt(),
            coef: e1 / dt,
            resid: (e2 - e1 * e1 / dt).max(0.0).sqrt(),
        }
    }
}

fn initial_state(model: &MeanFieldModel, rng: &CounterRng, i: usize) -> f64 {
    if model.v0() == 0.0 {
        model.m0()
    } else {
        model.m0() + model.v0().sqrt() * rng.normal(Stream::InitialState, i as u64, 0)
    }
}

/// `∫_{t_k}^{t_{k+1}} e^{alpha (t_{k+1} - s)} src(s) ds` for every step.
fn affine_sources(model: &MeanFieldModel, grid: &TimeGrid, src: impl Fn(f64) -> f64) -> Vec<f64> {
    let alpha = model.alpha();
    (0..grid.steps())
        .map(|k| {
            let (a, b) = (grid.point(k), grid.point(k + 1));
            simpson(|s| (alpha * (b - s)).exp() * src(s), a, b)
        })
        .collect()
}

/// Runs all particles through exact affine steps with the given per-step
/// sources. Returns the path array when `store` is set, and the per-step
/// empirical mean and variance.
fn run_affine(
    model: &MeanFieldModel,
    sim: &SimConfig,
    sources: &[f64],
    store: bool,
) -> (Option<Vec<f64>>, Vec<(f64, f64)>) {
    let m = sim.particles;
    let grid = sim.grid;
    let rng = CounterRng::new(sim.seed);
    let step = ExactStep::new(model.alpha(), grid.dt());
    let sigma = model.sigma();
    let exec = sim.execution;

    let mut current = vec![0.0; m];
    exec.for_each_chunk_mut(&mut current, CHUNK, |off, s| {
        for (j, x) in s.iter_mut().enumerate() {
            *x = initial_state(model, &rng, off + j);
        }
    });
    let mut paths = store.then(|| {
        let mut v = Vec::with_capacity(m * grid.len());
        v.extend_from_slice(&current);
        v
    });
    let mut moments = Vec::with_capacity(grid.len());
    moments.push(slice_moments(&current, exec));
    let mut next = vec![0.0; m];
    for (k, &source) in sources.iter().enumerate() {
        let prev = &current;
        exec.for_each_chunk_mut(&mut next, CHUNK, |off, s| {
            for (j, out) in s.iter_mut().enumerate() {
                let i = off + j;
                let (z1, z2) = rng.normals(Stream::Brownian, i as u64, k as u64);
                let dw = step.sqrt_dt * z1;
                let integral = step.coef * dw + step.resid * z2;
                *out = step.decay * prev[i] + source + sigma * integral;
            }
        });
        std::mem::swap(&mut current, &mut next);
        moments.push(slice_moments(&current, exec));
        if let Some(p) = paths.as_mut() {
            p.extend_from_slice(&current);
        }
    }
    (paths, moments)
}

/// Interacting particle system: Euler-Maruyama with the running empirical
/// mean and variance in the drift.
fn run_interacting(model: &MeanFieldModel, policy: &PolicyPair, sim: &SimConfig) -> Vec<f64> {
    let m = sim.particles;
    let grid = sim.grid;
    let rng = CounterRng::new(sim.seed);
    let exec = sim.execution;
    let (dt, sqrt_dt) = (grid.dt(), grid.dt().sqrt());
    let (alpha, beta1, beta2, gamma, sigma) = (
        model.alpha(),
        model.beta1(),
        model.beta2(),
        model.gamma(),
        model.sigma(),
    );

    let mut x = vec![0.0; m * grid.len()];
    exec.for_each_chunk_mut(&mut x[..m], CHUNK, |off, s| {
        for (j, v) in s.iter_mut().enumerate() {
            *v = initial_state(model, &rng, off + j);
        }
    });
    for k in 0..grid.steps() {
        let (head, tail) = x.split_at_mut((k + 1) * m);
        let prev = &head[k * m..];
        let (mean, var) = slice_moments(prev, exec);
        let a = policy.a_star.eval(grid.point(k));
        let common = a + beta1 * mean + beta2 * a - gamma * var;
        exec.for_each_chunk_mut(&mut tail[..m], CHUNK, |off, s| {
            for (j, out) in s.iter_mut().enumerate() {
                let i = off + j;
                let z1 = rng.normals(Stream::Brownian, i as u64, k as u64).0;
                *out = prev[i] + (common + alpha * prev[i]) * dt + sigma * sqrt_dt * z1;
            }
        });
    }
    x
}

/// Simulates the equilibrium state under the given policy.
///
/// In analytic mode the drift uses `f(t)`, `g(t) - f(t)²` and the
/// deterministic mean effort `a*(t)`, and every step is exact. In particle
/// mode the empirical moments of the ensemble replace the curves.
pub fn simulate_equilibrium(
    model: &MeanFieldModel,
    policy: &PolicyPair,
    moments: &MomentCurves,
    sim: &SimConfig,
) -> ParticleEnsemble {
    let grid = sim.grid;
    let x = match sim.mode {
        MeanFieldMode::Analytic => {
            let b2 = model.beta2();
            let sources = affine_sources(model, &grid, |s| {
                (1.0 + b2) * policy.a_star.eval(s) + model.beta1() * moments.mean_at(s)
                    - model.gamma() * moments.variance_at(s)
            });
            run_affine(model, sim, &sources, true).0.expect("paths requested")
        }
        MeanFieldMode::Particle => run_interacting(model, policy, sim),
    };
    let (realized_mean, realized_second_moment) = realized_moments(&x, sim.particles, grid, sim.execution);
    ParticleEnsemble {
        grid,
        particles: sim.particles,
        x,
        y: None,
        realized_mean,
        realized_second_moment,
        effort: Some(DeterministicCurve::from_fn(grid, |t| policy.a_star.eval(t))),
        noise_seed: Some(sim.seed),
        execution: sim.execution,
    }
}

/// Damped Picard iteration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tolerance: 1e-3,
            max_iterations: 50,
        }
    }
}

/// Outcome of [`fixed_point_meanfield`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub moments: MomentCurves,
    pub iterations: usize,
    pub residual: f64,
}

/// Finds the population mean and variance curves that reproduce themselves.
///
/// Starting from constant `m0` / `v0` curves, each iteration simulates the
/// particles with the current curves frozen in the drift, then moves the
/// curves halfway (by default) towards the empirical ones. Every iteration
/// reuses the same Brownian increments, so the map being iterated is
/// deterministic and the sup-norm change can fall below tolerances far
/// smaller than the Monte Carlo error.
pub fn fixed_point_meanfield(
    model: &MeanFieldModel,
    policy: &PolicyPair,
    sim: &SimConfig,
    cfg: &FixedPointConfig,
) -> Result<FixedPoint> {
    let grid = sim.grid;
    let mut mean = DeterministicCurve::constant(grid, model.m0());
    let mut var = DeterministicCurve::constant(grid, model.v0());
    let mut residual = f64::INFINITY;
    for iteration in 1..=cfg.max_iterations {
        let b2 = model.beta2();
        let sources = affine_sources(model, &grid, |s| {
            (1.0 + b2) * policy.a_star.eval(s) + model.beta1() * mean.eval(s) - model.gamma() * var.eval(s)
        });
        let (_, moments) = run_affine(model, sim, &sources, false);
        let w = cfg.damping;
        let new_mean: Vec<f64> = mean
            .values()
            .iter()
            .zip(&moments)
            .map(|(old, m)| (1.0 - w) * old + w * m.0)
            .collect();
        let new_var: Vec<f64> = var
            .values()
            .iter()
            .zip(&moments)
            .map(|(old, m)| (1.0 - w) * old + w * m.1)
            .collect();
        let new_mean = DeterministicCurve::new(grid, new_mean)?;
        let new_var = DeterministicCurve::new(grid, new_var)?;
        residual = new_mean.sup_distance(&mean).max(new_var.sup_distance(&var));
        mean = new_mean;
        var = new_var;
        if residual <= cfg.tolerance {
            return Ok(FixedPoint {
                moments: MomentCurves::from_mean_variance(mean, &var),
                iterations: iteration,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iterations,
        residual,
    })
}

/// Per-step integrals of the running cost `c(a(s))`.
fn cost_increments(model: &MeanFieldModel, grid: &TimeGrid, effort: &DeterministicCurve) -> Vec<f64> {
    (0..grid.steps())
        .map(|k| simpson(|s| cost(model, effort.eval(s)), grid.point(k), grid.point(k + 1)))
        .collect()
}

/// Adds the agent's continuation utility to an ensemble.
///
/// Under the optimal effort the utility moves by `c(a*_t) dt + z*_t sigma dW_t`
/// from `Y_0 = R0`; the Brownian increments are replayed from the ensemble's
/// seed and `z*` is taken at each step midpoint. Returns the updated ensemble
/// and the contract samples `xi = Y_T`.
pub fn simulate_continuation_utility(
    ensemble: &ParticleEnsemble,
    model: &MeanFieldModel,
    policy: &PolicyPair,
) -> Result<(ParticleEnsemble, Vec<f64>)> {
    let seed = ensemble.noise_seed.ok_or(Error::MissingIncrements)?;
    let grid = ensemble.grid;
    let m = ensemble.particles;
    let rng = CounterRng::new(seed);
    let exec = ensemble.execution;
    let sqrt_dt = grid.dt().sqrt();
    let sigma = model.sigma();
    let costs = cost_increments(model, &grid, &policy.a_star);
    let z_mid: Vec<f64> = (0..grid.steps())
        .map(|k| policy.z_star.eval(0.5 * (grid.point(k) + grid.point(k + 1))))
        .collect();

    let mut y = vec![0.0; m * grid.len()];
    y[..m].fill(model.r0());
    for k in 0..grid.steps() {
        let (head, tail) = y.split_at_mut((k + 1) * m);
        let prev = &head[k * m..];
        let (c, z) = (costs[k], z_mid[k]);
        exec.for_each_chunk_mut(&mut tail[..m], CHUNK, |off, s| {
            for (j, out) in s.iter_mut().enumerate() {
                let i = off + j;
                let z1 = rng.normals(Stream::Brownian, i as u64, k as u64).0;
                *out = prev[i] + c + z * sigma * sqrt_dt * z1;
            }
        });
    }
    let xi = y[grid.steps() * m..].to_vec();
    let mut out = ensemble.clone();
    out.y = Some(y);
    Ok((out, xi))
}

/// Evaluates the contract's path formula on every stored path.
pub fn contract_from_paths(ensemble: &ParticleEnsemble, model: &MeanFieldModel, contract: &ContractSpec) -> Vec<f64> {
    let grid = ensemble.grid;
    ensemble
        .execution
        .map_chunks(ensemble.particles, CHUNK, |r| {
            let mut path = vec![0.0; grid.len()];
            r.map(|i| {
                for (k, p) in path.iter_mut().enumerate() {
                    *p = ensemble.x[k * ensemble.particles + i];
                }
                contract.evaluate_path(model, &grid, &path)
            })
            .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
}

fn estimate(samples: &[f64], seed: u64) -> Estimate {
    let s = summarize(samples);
    Estimate {
        value: s.mean,
        standard_error: s.se_mean,
        particles: samples.len(),
        seed,
    }
}

/// Expected utility `E[xi - ∫ c(e_t) dt]` of an agent who deviates to the
/// deterministic effort `e` while the population stays at equilibrium.
///
/// The deviating state has drift `e(t) + alpha X + beta1 f(t) + beta2 a*(t) - gamma V(t)`
/// and is sampled exactly; the contract is evaluated with its path formula.
/// Particle `i` reuses the noise of particle `i` in [`simulate_equilibrium`],
/// so utilities of different deviations are directly comparable.
pub fn agent_utility(
    model: &MeanFieldModel,
    policy: &PolicyPair,
    moments: &MomentCurves,
    contract: &ContractSpec,
    effort: &DeterministicCurve,
    sim: &SimConfig,
) -> Estimate {
    let grid = sim.grid;
    let b2 = model.beta2();
    let sources = affine_sources(model, &grid, |s| {
        effort.eval(s) + b2 * policy.a_star.eval(s) + model.beta1() * moments.mean_at(s)
            - model.gamma() * moments.variance_at(s)
    });
    let running_cost: f64 = cost_increments(model, &grid, effort).iter().sum();
    let rng = CounterRng::new(sim.seed);
    let step = ExactStep::new(model.alpha(), grid.dt());
    let sigma = model.sigma();
    let utilities: Vec<f64> = sim
        .execution
        .map_chunks(sim.particles, CHUNK, |r| {
            let mut path = vec![0.0; grid.len()];
            r.map(|i| {
                path[0] = initial_state(model, &rng, i);
                for k in 0..grid.steps() {
                    let (z1, z2) = rng.normals(Stream::Brownian, i as u64, k as u64);
                    let dw = step.sqrt_dt * z1;
                    path[k + 1] = step.decay * path[k] + sources[k] + sigma * (step.coef * dw + step.resid * z2);
                }
                contract.evaluate_path(model, &grid, &path) - running_cost
            })
            .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
    estimate(&utilities, sim.seed)
}

/// Deterministic perturbation `a*(t) + p(t)` with `|p| <= amplitude`.
///
/// `p` is a random trigonometric polynomial of degree three rescaled to the
/// requested amplitude; efforts are clipped at zero.
pub fn perturbed_effort(base: &DeterministicCurve, amplitude: f64, seed: u64, index: u64) -> DeterministicCurve {
    let rng = CounterRng::new(seed);
    let horizon = base.grid().horizon().max(f64::MIN_POSITIVE);
    let coeffs: Vec<(f64, f64)> = (0..4).map(|j| rng.normals(Stream::Probe, index, j)).collect();
    let raw = |t: f64| {
        coeffs
            .iter()
            .enumerate()
            .map(|(j, &(a, b))| {
                let w = std::f64::consts::PI * j as f64 * t / horizon;
                a * w.cos() + b * w.sin()
            })
            .sum::<f64>()
    };
    let grid = base.grid();
    let peak = grid.points().map(|t| raw(t).abs()).fold(0.0, f64::max).max(1e-300);
    let u = CounterRng::new(seed).uniforms(Stream::Probe, index, 99).0;
    let scale = amplitude * (0.2 + 0.8 * u) / peak;
    DeterministicCurve::from_fn(grid, |t| (base.eval(t) + scale * raw(t)).max(0.0))
}

/// Principal's realised objective `E[X_T - xi]`, optionally penalised by
/// `lambdaX Var(X_T) + lambdaXi Var(xi) + lambdaXXi Var(X_T - xi)`.
///
/// The standard error refers to the mean of `X_T - xi`.
pub fn principal_objective(
    ensemble: &ParticleEnsemble,
    xi: &[f64],
    seed: u64,
    penalties: Option<&RiskAversePenalties>,
) -> Estimate {
    let xt = ensemble.terminal_x();
    assert_eq!(xt.len(), xi.len(), "contract samples must match the ensemble");
    let gain: Vec<f64> = xt.iter().zip(xi).map(|(x, s)| x - s).collect();
    let mut est = estimate(&gain, seed);
    if let Some(p) = penalties {
        if !p.is_zero() {
            est.value -= p.lambda_x * summarize(xt).variance
                + p.lambda_xi * summarize(xi).variance
                + p.lambda_x_xi * summarize(&gain).variance;
        }
    }
    est
}
