//! Finite-population game with quadratic cost and no effort or variance
//! coupling (`beta2 = gamma = 0`, `n = 2`).
//!
//! With `B = alpha I + (beta1 / N) 1 1ᵀ` the population average `X̄` is an
//! Ornstein-Uhlenbeck process with rate `kappa` and every deviation
//! `D^i = X^i - X̄` is one with rate `alpha` driven by `W^i - W̄`. Both are
//! stepped exactly: each player draws the pair
//!
//! ```text
//! I_r = ∫_{t_k}^{t_{k+1}} e^{r (t_{k+1} - s)} dW^i_s,   r ∈ {alpha, kappa}
//! ```
//!
//! jointly, `X̄` moves with `sigma mean(I_kappa)` and `D^i` with
//! `sigma (I_alpha^i - mean(I_alpha))`. Work per step is `O(N)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::closed_form::{contract_spec, optimal_policy_on};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::export::fmt_f64;
use crate::model::{DeterministicCurve, GaussianLaw, MeanFieldModel, TimeGrid};
use crate::optim::golden_section_max;
use crate::quad::expm1_ratio;
use crate::rng::{CounterRng, Stream};
use crate::stats::{linear_fit, wasserstein1};

/// Independent reference-sample pairs averaged into the noise floor.
pub const FLOOR_REPLICATES: usize = 8;
/// A distance counts as "at the noise floor" below this multiple of it.
pub const FLOOR_FACTOR: f64 = 3.0;
/// Admissible range of the log-log slope of `W1` against `N`.
pub const SLOPE_RANGE: (f64, f64) = (-0.8, -0.2);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NPlayerScheme {
    /// Exact Gaussian transitions of the average and the deviations.
    #[default]
    Exact,
    /// Joint Euler-Maruyama on the `N` coordinates.
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NPlayerConfig {
    pub players: usize,
    pub games: usize,
    pub seed: u64,
    pub grid: TimeGrid,
    pub scheme: NPlayerScheme,
    pub execution: Execution,
}

impl NPlayerConfig {
    pub fn new(players: usize, games: usize, grid: TimeGrid, seed: u64) -> Result<Self> {
        if players == 0 {
            return Err(Error::invalid("players", "at least one player is required"));
        }
        if games == 0 {
            return Err(Error::invalid("games", "at least one game is required"));
        }
        Ok(Self {
            players,
            games,
            seed,
            grid,
            scheme: NPlayerScheme::default(),
            execution: Execution::default(),
        })
    }

    pub fn with_players(mut self, players: usize) -> Self {
        self.players = players.max(1);
        self
    }

    pub fn with_scheme(mut self, scheme: NPlayerScheme) -> Self {
        self.scheme = scheme;
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

fn require_linear(model: &MeanFieldModel) -> Result<()> {
    if model.beta2() != 0.0 || model.gamma() != 0.0 {
        return Err(Error::Unsupported(format!(
            "the N-player model needs beta2 = 0 and gamma = 0 (got beta2 = {}, gamma = {})",
            model.beta2(),
            model.gamma()
        )));
    }
    Ok(())
}

fn require_quadratic(model: &MeanFieldModel) -> Result<()> {
    if model.n() != 2.0 {
        return Err(Error::Unsupported(format!(
            "the N-player model needs quadratic cost n = 2 (got n = {})",
            model.n()
        )));
    }
    Ok(())
}

fn require_supported(model: &MeanFieldModel) -> Result<()> {
    require_linear(model)?;
    require_quadratic(model)
}

/// `B^N = alpha I_N + (beta1 / N) 1 1ᵀ`, row-major.
pub fn interaction_matrix(players: usize, model: &MeanFieldModel) -> Result<Vec<Vec<f64>>> {
    require_linear(model)?;
    let off = model.beta1() / players as f64;
    Ok((0..players)
        .map(|i| {
            (0..players)
                .map(|j| if i == j { model.alpha() + off } else { off })
                .collect()
        })
        .collect())
}

/// Diagonal sensitivity `e^{kappa (T-t)}` and effort `z / c`, identical for
/// every player and every `N`.
pub fn nplayer_policy(model: &MeanFieldModel, grid: TimeGrid) -> Result<(DeterministicCurve, DeterministicCurve)> {
    require_quadratic(model)?;
    let z = DeterministicCurve::from_fn(grid, |t| (model.kappa() * (model.horizon() - t)).exp());
    let a = z.map(|z| z / model.c());
    Ok((z, a))
}

/// Simulated games. Paths are stored game by game, then player by player.
#[derive(Debug, Clone, PartialEq)]
pub struct NPlayerPaths {
    grid: TimeGrid,
    players: usize,
    games: usize,
    x: Vec<f64>,
    contracts: Vec<f64>,
}

impl NPlayerPaths {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn games(&self) -> usize {
        self.games
    }

    pub fn path(&self, game: usize, player: usize) -> &[f64] {
        let len = self.grid.len();
        let start = (game * self.players + player) * len;
        &self.x[start..start + len]
    }

    /// `X̄` of one game at grid index `k`.
    pub fn average_at(&self, game: usize, k: usize) -> f64 {
        (0..self.players).map(|i| self.path(game, i)[k]).sum::<f64>() / self.players as f64
    }

    /// Contract accumulated during the simulation.
    pub fn contract(&self, game: usize, player: usize) -> f64 {
        self.contracts[game * self.players + player]
    }

    /// One player's contract across all games.
    pub fn player_contracts(&self, player: usize) -> Vec<f64> {
        (0..self.games).map(|g| self.contract(g, player)).collect()
    }
}

/// Deterministic per-step coefficients shared by all games.
struct Kernel {
    dt: f64,
    sqrt_dt: f64,
    alpha: f64,
    beta1: f64,
    sigma: f64,
    /// `e^{kappa (T - t_k)}` on the grid.
    w: Vec<f64>,
    effort: Vec<f64>,
    /// `∫ e^{kappa (t_{k+1} - s)} a(s) ds` per step.
    source: Vec<f64>,
    decay_alpha: f64,
    decay_kappa: f64,
    /// Cholesky factor of `Cov(I_kappa, I_alpha)`.
    l11: f64,
    l21: f64,
    l22: f64,
    /// `R0 - trap ∫ w² / (2c) dt`.
    base: f64,
}

impl Kernel {
    fn new(model: &MeanFieldModel, grid: TimeGrid) -> Self {
        let (alpha, kappa, c) = (model.alpha(), model.kappa(), model.c());
        let dt = grid.dt();
        let w: Vec<f64> = grid.points().map(|t| (kappa * (model.horizon() - t)).exp()).collect();
        let effort: Vec<f64> = w.iter().map(|w| w / c).collect();
        let source = (1..grid.len())
            .map(|k| (kappa * (model.horizon() - grid.point(k))).exp() * expm1_ratio(2.0 * kappa, dt) / c)
            .collect();
        let (vk, va, cov) = (
            expm1_ratio(2.0 * kappa, dt),
            expm1_ratio(2.0 * alpha, dt),
            expm1_ratio(alpha + kappa, dt),
        );
        let l11 = vk.sqrt();
        let l21 = if l11 > 0.0 { cov / l11 } else { 0.0 };
        let l22 = (va - l21 * l21).max(0.0).sqrt();
        let running: f64 = w
            .windows(2)
            .map(|p| 0.5 * dt * (p[0] * p[0] + p[1] * p[1]) / (2.0 * c))
            .sum();
        Self {
            dt,
            sqrt_dt: dt.sqrt(),
            alpha,
            beta1: model.beta1(),
            sigma: model.sigma(),
            w,
            effort,
            source,
            decay_alpha: (alpha * dt).exp(),
            decay_kappa: (kappa * dt).exp(),
            l11,
            l21,
            l22,
            base: model.r0() - running,
        }
    }

    /// Contract increment over step `k` for a player moving `x0 -> x1`
    /// while the average moves `xb0 -> xb1`.
    #[inline]
    fn contract_step(&self, k: usize, x0: f64, x1: f64, xb0: f64, xb1: f64) -> f64 {
        let (w0, w1) = (self.w[k], self.w[k + 1]);
        0.5 * (w0 + w1) * (x1 - x0)
            - 0.5 * self.dt * (w0 * (self.alpha * x0 + self.beta1 * xb0) + w1 * (self.alpha * x1 + self.beta1 * xb1))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Runs one game. Returns the player-major paths when `store` is set and
/// the contracts of all players.
fn run_game(
    model: &MeanFieldModel,
    kernel: &Kernel,
    cfg: &NPlayerConfig,
    game: usize,
    store: bool,
) -> (Option<Vec<f64>>, Vec<f64>) {
    let n = cfg.players;
    let len = cfg.grid.len();
    let rng = CounterRng::new(cfg.seed);
    let sd0 = model.v0().sqrt();
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            if sd0 == 0.0 {
                model.m0()
            } else {
                model.m0() + sd0 * rng.normals3(Stream::NPlayerInitial, game as u64, i as u64, 0).0
            }
        })
        .collect();
    let mut xbar = mean(&x);
    let mut dev: Vec<f64> = x.iter().map(|x| x - xbar).collect();
    let mut paths = store.then(|| vec![0.0; n * len]);
    let record = |paths: &mut Option<Vec<f64>>, k: usize, x: &[f64]| {
        if let Some(p) = paths.as_mut() {
            for (i, &v) in x.iter().enumerate() {
                p[i * len + k] = v;
            }
        }
    };
    record(&mut paths, 0, &x);
    let mut contracts = vec![kernel.base; n];
    let mut next = vec![0.0; n];
    let mut i_alpha = vec![0.0; n];
    let mut i_kappa = vec![0.0; n];
    for k in 0..cfg.grid.steps() {
        let next_bar = match cfg.scheme {
            NPlayerScheme::Exact => {
                for i in 0..n {
                    let (z1, z2) = rng.normals3(Stream::NPlayerBrownian, game as u64, i as u64, k as u64);
                    i_kappa[i] = kernel.l11 * z1;
                    i_alpha[i] = kernel.l21 * z1 + kernel.l22 * z2;
                }
                let (mk, ma) = (mean(&i_kappa), mean(&i_alpha));
                let nb = kernel.decay_kappa * xbar + kernel.source[k] + kernel.sigma * mk;
                for i in 0..n {
                    dev[i] = kernel.decay_alpha * dev[i] + kernel.sigma * (i_alpha[i] - ma);
                    next[i] = nb + dev[i];
                }
                nb
            }
            NPlayerScheme::Euler => {
                let common = kernel.effort[k] + kernel.beta1 * xbar;
                for i in 0..n {
                    let z = rng.normals3(Stream::NPlayerBrownian, game as u64, i as u64, k as u64).0;
                    next[i] = x[i] + (common + kernel.alpha * x[i]) * kernel.dt + kernel.sigma * kernel.sqrt_dt * z;
                }
                mean(&next)
            }
        };
        for i in 0..n {
            contracts[i] += kernel.contract_step(k, x[i], next[i], xbar, next_bar);
        }
        std::mem::swap(&mut x, &mut next);
        xbar = next_bar;
        record(&mut paths, k + 1, &x);
    }
    (paths, contracts)
}

/// Simulates `cfg.games` independent games under the optimal efforts and
/// stores every path.
pub fn simulate_nplayer(model: &MeanFieldModel, cfg: &NPlayerConfig) -> Result<NPlayerPaths> {
    require_supported(model)?;
    let kernel = Kernel::new(model, cfg.grid);
    let runs = cfg
        .execution
        .map_indexed(cfg.games, |g| run_game(model, &kernel, cfg, g, true));
    let mut x = Vec::with_capacity(cfg.games * cfg.players * cfg.grid.len());
    let mut contracts = Vec::with_capacity(cfg.games * cfg.players);
    for (p, c) in runs {
        x.extend(p.expect("paths requested"));
        contracts.extend(c);
    }
    Ok(NPlayerPaths {
        grid: cfg.grid,
        players: cfg.players,
        games: cfg.games,
        x,
        contracts,
    })
}

/// Contract of one player in every game, without keeping paths.
pub fn simulate_player_contracts(model: &MeanFieldModel, cfg: &NPlayerConfig, player: usize) -> Result<Vec<f64>> {
    require_supported(model)?;
    if player >= cfg.players {
        return Err(Error::invalid(
            "player",
            format!("player index {player} out of range for {} players", cfg.players),
        ));
    }
    let kernel = Kernel::new(model, cfg.grid);
    Ok(cfg
        .execution
        .map_indexed(cfg.games, |g| run_game(model, &kernel, cfg, g, false).1[player]))
}

/// Recomputes every contract from the stored paths:
///
/// ```text
/// xi^i = R0 - ∫ e^{2 kappa (T-t)}/(2c) dt - ∫ e^{kappa (T-t)} (B X_t)^i dt + ∫ e^{kappa (T-t)} dX^i_t
/// ```
///
/// with trapezoidal time integrals and the population average taken from
/// the paths. Indexed as `contracts[game * N + player]`.
pub fn nplayer_contract(paths: &NPlayerPaths, model: &MeanFieldModel) -> Result<Vec<f64>> {
    require_supported(model)?;
    let kernel = Kernel::new(model, paths.grid);
    let mut out = Vec::with_capacity(paths.games * paths.players);
    for g in 0..paths.games {
        let bars: Vec<f64> = (0..paths.grid.len()).map(|k| paths.average_at(g, k)).collect();
        for i in 0..paths.players {
            let x = paths.path(g, i);
            let mut xi = kernel.base;
            for k in 0..paths.grid.steps() {
                xi += kernel.contract_step(k, x[k], x[k + 1], bars[k], bars[k + 1]);
            }
            out.push(xi);
        }
    }
    Ok(out)
}

/// `(e^{2 kappa (T-t)} - 1) / (4 kappa c)`, or `(T-t)/(2c)` when `kappa = 0`.
pub fn value_offset(model: &MeanFieldModel, t: f64) -> f64 {
    expm1_ratio(2.0 * model.kappa(), model.horizon() - t) / (2.0 * model.c())
}

/// Principal's value `e^{kappa (T-t)} mean(x) + value_offset(t) - mean(y)`.
pub fn nplayer_value(model: &MeanFieldModel, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    require_supported(model)?;
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid(
            "x",
            "state and utility vectors must be nonempty and of equal length",
        ));
    }
    Ok((model.kappa() * (model.horizon() - t)).exp() * mean(x) + value_offset(model, t) - mean(y))
}

/// Richardson-extrapolated central difference of `f` at `x`.
fn derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Residual of the reduced principal equation for `f = V^N + mean(y)`:
///
/// ```text
/// -∂_t f - B x · ∇f - (sigma²/2) Δf - sup_z { a(z) · ∇f - mean(z_ii² / (2c)) }
/// ```
///
/// with all derivatives by finite differences and the supremum, which
/// separates over the diagonal entries, by golden-section search.
pub fn value_pde_residual(model: &MeanFieldModel, t: f64, x: &[f64]) -> Result<f64> {
    require_supported(model)?;
    const H: f64 = 1e-5;
    const H2: f64 = 1e-4;
    let n = x.len();
    let zeros = vec![0.0; n];
    let f = |t: f64, x: &[f64]| nplayer_value(model, t, x, &zeros).expect("validated");
    let shifted = |i: usize, h: f64| {
        let mut v = x.to_vec();
        v[i] += h;
        v
    };
    let dt = derivative(|s| f(s, x), t, H);
    let grad: Vec<f64> = (0..n).map(|i| derivative(|h| f(t, &shifted(i, h)), 0.0, H)).collect();
    let f0 = f(t, x);
    let laplacian: f64 = (0..n)
        .map(|i| (f(t, &shifted(i, H2)) - 2.0 * f0 + f(t, &shifted(i, -H2))) / (H2 * H2))
        .sum();
    let b = interaction_matrix(n, model)?;
    let drift: f64 = (0..n)
        .map(|i| b[i].iter().zip(x).map(|(b, x)| b * x).sum::<f64>() * grad[i])
        .sum();
    let c = model.c();
    let sup: f64 = grad
        .iter()
        .map(|&p| {
            let bound = 4.0 * (1.0 + n as f64 * p.abs());
            golden_section_max(|z| z / c * p - z * z / (2.0 * c * n as f64), -bound, bound, 1e-12).1
        })
        .sum();
    Ok(-dt - drift - 0.5 * model.sigma().powi(2) * laplacian - sup)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub samples: usize,
    pub w1: f64,
    pub w1_noise_floor: f64,
}

/// Outcome of [`convergence_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Mean-field law of the contract the samples are compared with.
    pub law: GaussianLaw,
    /// Least-squares slope of `ln W1` against `ln N`.
    pub slope: f64,
    pub strictly_decreasing: bool,
    pub slope_in_range: bool,
    /// Every row within [`FLOOR_FACTOR`] times its noise floor.
    pub at_noise_floor: bool,
    /// The `N`-player effort equals the mean-field effort on the grid.
    pub effort_match: bool,
    /// `strictly_decreasing && slope_in_range`.
    pub trend_pass: bool,
}

impl ConvergenceReport {
    /// Writes `N, samples, w1, w1_noise_floor`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "N,samples,w1,w1_noise_floor")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.n,
                r.samples,
                fmt_f64(r.w1),
                fmt_f64(r.w1_noise_floor)
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gaussian sample of size `len` from `law`, keyed by `replicate`.
fn reference_sample(law: GaussianLaw, seed: u64, replicate: u64, len: usize) -> Vec<f64> {
    let rng = CounterRng::new(seed);
    let sd = law.std_dev();
    (0..len)
        .map(|i| law.mean + sd * rng.normal(Stream::Reference, i as u64, replicate))
        .collect()
}

/// Mean `W1` between independent pairs of reference samples of size `len`.
pub fn noise_floor(law: GaussianLaw, seed: u64, len: usize) -> f64 {
    (0..FLOOR_REPLICATES as u64)
        .map(|r| {
            let a = reference_sample(law, seed, 1_000 + 2 * r, len);
            let b = reference_sample(law, seed, 1_001 + 2 * r, len);
            wasserstein1(&a, &b)
        })
        .sum::<f64>()
        / FLOOR_REPLICATES as f64
}

/// Distinct seed for the run with `n` players.
fn seed_for(seed: u64, n: usize) -> u64 {
    seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// For each `N`, pools player 0's contract over `cfg.games` games and
/// measures its `W1` distance to an equal-size sample of the mean-field
/// contract law.
pub fn convergence_experiment(model: &MeanFieldModel, ns: &[usize], cfg: &NPlayerConfig) -> Result<ConvergenceReport> {
    require_supported(model)?;
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::invalid(
            "ns",
            "player counts must be a nonempty list of positive integers",
        ));
    }
    let law = contract_spec(model).law;
    let floor = noise_floor(law, cfg.seed, cfg.games);
    let mut rows = Vec::with_capacity(ns.len());
    for (idx, &n) in ns.iter().enumerate() {
        let run = cfg.with_players(n).with_seed(seed_for(cfg.seed, n));
        let sample = simulate_player_contracts(model, &run, 0)?;
        let reference = reference_sample(law, cfg.seed, idx as u64, cfg.games);
        rows.push(ConvergenceRow {
            n,
            samples: cfg.games,
            w1: wasserstein1(&sample, &reference),
            w1_noise_floor: floor,
        });
    }
    let strictly_decreasing = rows.windows(2).all(|p| p[1].w1 < p[0].w1);
    let slope = if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.w1.ln()).collect();
        linear_fit(&xs, &ys).0
    } else {
        f64::NAN
    };
    let slope_in_range = slope >= SLOPE_RANGE.0 && slope <= SLOPE_RANGE.1;
    let at_noise_floor = rows.iter().all(|r| r.w1 <= FLOOR_FACTOR * r.w1_noise_floor);
    let (_, effort) = nplayer_policy(model, cfg.grid)?;
    let effort_match = effort.values() == optimal_policy_on(model, cfg.grid).a_star.values();
    Ok(ConvergenceReport {
        rows,
        law,
        slope,
        strictly_decreasing,
        slope_in_range,
        at_noise_floor,
        effort_match,
        trend_pass: strictly_decreasing && slope_in_range,
    })
}
