//! Reference implementations written independently of the library code,
//! plus the test problems built on them. Shared by the integration tests and
//! the acceptance suite.
#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use locpomdp::ddp::{Mdp, RewardExpansion};
use locpomdp::domains::{make_lqg, LqgParams};
use locpomdp::{Belief, DomainSpec, Dynamics, GaussianBelief, Observation};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Textbook Kalman filter for `x' = A x + B u + w`, `z = C x' + v`.
pub struct KalmanFilter {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl KalmanFilter {
    pub fn step(
        &self,
        x: &DVector<f64>,
        p: &DMatrix<f64>,
        u: &DVector<f64>,
        z: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let x_pred = &self.a * x + &self.b * u;
        let p_pred = &self.a * p * self.a.transpose() + &self.q;
        let s = &self.c * &p_pred * self.c.transpose() + &self.r;
        let k = &p_pred * self.c.transpose() * s.try_inverse().expect("invertible innovation");
        let x_new = &x_pred + &k * (z - &self.c * &x_pred);
        let n = x.len();
        let p_new = (DMatrix::identity(n, n) - &k * &self.c) * p_pred;
        (x_new, p_new)
    }
}

/// Finite-horizon discrete LQR minimizing
/// `Σ (xᵀQx + uᵀRu) + x_Nᵀ Q_f x_N` over `steps` actions.
/// Returns gains `K_i` (`u = −K_i x`) and the cost-to-go matrix at time 0.
pub fn riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    steps: usize,
) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let mut p = qf.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); steps];
    for i in (0..steps).rev() {
        let btp = b.transpose() * &p;
        let k = (r + &btp * b).try_inverse().expect("invertible") * &btp * a;
        p = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        p = (&p + p.transpose()) * 0.5;
        gains[i] = k;
    }
    (gains, p)
}

/// Sample statistics of one-sided truncation by rejection.
pub struct RejectionEstimate {
    pub mean: f64,
    pub var: f64,
    pub mass: f64,
    pub se_mean: f64,
    pub se_var: f64,
    pub se_mass: f64,
}

/// Draws `samples` normals `N(mu, sigma²)` and keeps those with
/// `x ≥ bound` (`above`) or `x ≤ bound`.
pub fn rejection_truncation(
    mu: f64,
    sigma: f64,
    above: bool,
    bound: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> RejectionEstimate {
    let mut kept = 0usize;
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    // Accumulate around mu to keep the sums well conditioned.
    for _ in 0..samples {
        let e: f64 = rng.sample(StandardNormal);
        let x = mu + sigma * e;
        let keep = if above { x >= bound } else { x <= bound };
        if keep {
            let d = x - mu;
            kept += 1;
            s1 += d;
            s2 += d * d;
            s3 += d * d * d;
            s4 += d * d * d * d;
        }
    }
    let k = kept as f64;
    let m1 = s1 / k;
    let var = s2 / k - m1 * m1;
    // Fourth central moment from raw moments about mu.
    let (r2, r3, r4) = (s2 / k, s3 / k, s4 / k);
    let m4 = r4 - 4.0 * m1 * r3 + 6.0 * m1 * m1 * r2 - 3.0 * m1.powi(4);
    let mass = k / samples as f64;
    RejectionEstimate {
        mean: mu + m1,
        var: var * k / (k - 1.0),
        mass,
        se_mean: (var / k).sqrt(),
        se_var: ((m4 - var * var).max(0.0) / k).sqrt(),
        se_mass: (mass * (1.0 - mass) / samples as f64).sqrt(),
    }
}

/// Particle cloud for a single integrator in the box `[0, w] × [0, h]` with
/// inelastic walls: a particle leaving the box is clamped back onto it.
pub struct WallParticles {
    pub xs: Vec<[f64; 2]>,
    pub in_contact: Vec<bool>,
    pub room: [f64; 2],
}

/// Per-step summary of a particle cloud.
#[derive(Debug, Clone, Copy)]
pub struct ParticleSummary {
    /// Fraction of particles strictly inside the room.
    pub free_fraction: f64,
    pub free_mean: [f64; 2],
    pub free_std: [f64; 2],
}

impl WallParticles {
    pub fn sample(mean: [f64; 2], variance: f64, room: [f64; 2], count: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self {
            xs: Vec::with_capacity(count),
            in_contact: Vec::with_capacity(count),
            room,
        };
        let sd = variance.sqrt();
        for _ in 0..count {
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            p.push([mean[0] + sd * e0, mean[1] + sd * e1]);
        }
        p
    }

    fn clamp(&self, x: [f64; 2]) -> ([f64; 2], bool) {
        let c = [x[0].clamp(0.0, self.room[0]), x[1].clamp(0.0, self.room[1])];
        (c, c != x)
    }

    fn push(&mut self, x: [f64; 2]) {
        let (c, hit) = self.clamp(x);
        self.xs.push(c);
        self.in_contact.push(hit);
    }

    /// `x' = x + τ a + √(noise)·ε`, then wall contact.
    pub fn step(&mut self, displacement: [f64; 2], noise_variance: f64, rng: &mut ChaCha8Rng) {
        let sd = noise_variance.sqrt();
        for i in 0..self.xs.len() {
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            let x = self.xs[i];
            let moved = [x[0] + displacement[0] + sd * e0, x[1] + displacement[1] + sd * e1];
            let (c, hit) = self.clamp(moved);
            self.xs[i] = c;
            self.in_contact[i] = hit;
        }
    }

    pub fn summary(&self) -> ParticleSummary {
        let free: Vec<&[f64; 2]> = self
            .xs
            .iter()
            .zip(&self.in_contact)
            .filter(|(_, &c)| !c)
            .map(|(x, _)| x)
            .collect();
        let k = free.len() as f64;
        let mut mean = [0.0; 2];
        for x in &free {
            mean[0] += x[0] / k;
            mean[1] += x[1] / k;
        }
        let mut var = [0.0; 2];
        for x in &free {
            var[0] += (x[0] - mean[0]).powi(2) / (k - 1.0);
            var[1] += (x[1] - mean[1]).powi(2) / (k - 1.0);
        }
        ParticleSummary {
            free_fraction: k / self.xs.len() as f64,
            free_mean: mean,
            free_std: [var[0].sqrt(), var[1].sqrt()],
        }
    }
}

/// Optimal 1-D two-means split; returns `(low mean, high mean)`.
pub fn two_means(values: &[f64]) -> (f64, f64) {
    let mut xs = values.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let sse = |s: &[f64], m: f64| s.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for k in 1..xs.len() {
        let (lo, hi) = xs.split_at(k);
        let (ml, mh) = (mean(lo), mean(hi));
        let cost = sse(lo, ml) + sse(hi, mh);
        if cost < best.0 {
            best = (cost, ml, mh);
        }
    }
    (best.1, best.2)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// `M Mᵀ + floor·I` for a random `M`.
pub fn random_spd(n: usize, floor: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = random_matrix(n, n, 1.0, rng);
    &m * m.transpose() + DMatrix::identity(n, n) * floor
}

/// One step of the wall-contact comparison: the constrained belief against
/// the particle cloud.
#[derive(Debug, Clone, Copy)]
pub struct WallStep {
    pub weight: f64,
    pub free_mean: [f64; 2],
    pub particles: ParticleSummary,
}

/// Drives a planar belief straight into the floor of the room with an
/// uninformative sensor and compares it with `particles` samples of the true
/// dynamics.
pub fn wall_contact_comparison(steps: usize, particles: usize, seed: u64) -> Vec<WallStep> {
    use locpomdp::constraint::reapproximate;
    use locpomdp::domains::{make_planar_nav, PlanarNavParams};
    use locpomdp::Belief;

    let params = PlanarNavParams {
        start: [5.0, 1.5],
        start_variance: 0.25,
        observation_noise: 1e8,
        obstacles: vec![],
        horizon: steps + 1,
        ..Default::default()
    };
    let domain = make_planar_nav(&params).expect("valid scenario");
    let walls = domain.constraint.clone().expect("room walls");
    let start = domain.initial_belief.as_constrained().expect("constrained").free.clone();
    let mut belief = Belief::Constrained(reapproximate(1.0, &start, &start, walls.as_ref()).expect("split"));
    let action = DVector::from_vec(vec![0.0, -0.6]);
    let displacement = [0.0, -0.6 * params.timestep];

    let mut rng = rng(seed);
    let mut cloud = WallParticles::sample(params.start, params.start_variance, params.room, particles, &mut rng);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        belief = domain.belief_step(&belief, &action).expect("belief update");
        cloud.step(displacement, params.process_noise, &mut rng);
        let c = belief.as_constrained().expect("constrained");
        out.push(WallStep {
            weight: c.weight,
            free_mean: [c.free.mean[0], c.free.mean[1]],
            particles: cloud.summary(),
        });
    }
    out
}

pub fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

pub fn gaussian(b: &Belief) -> &GaussianBelief {
    b.as_gaussian().expect("unconstrained belief")
}

pub fn standard_normal(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn kalman_equivalence(n: usize, m: usize, seed: u64) -> f64 {
    let params = LqgParams::test_system(n, m);
    let domain = make_lqg(&params).unwrap();
    let kf = KalmanFilter {
        a: to_matrix(&params.a),
        b: to_matrix(&params.b),
        c: to_matrix(&params.c),
        q: to_matrix(&params.process_cov),
        r: to_matrix(&params.observation_cov),
    };
    let q_root = kf.q.clone().cholesky().unwrap().l();
    let r_root = kf.r.clone().cholesky().unwrap().l();
    let mut rng = rng(seed);

    let mut belief = domain.initial_belief.clone();
    let mut x = gaussian(&belief).mean.clone();
    let mut p = gaussian(&belief).cov.clone();
    let mut truth = x.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let u = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        truth = &kf.a * &truth + &kf.b * &u + &q_root * standard_normal(n, &mut rng);
        let z = &kf.c * &truth + &r_root * standard_normal(kf.c.nrows(), &mut rng);
        belief = domain.belief_correct(&belief, &u, &z).unwrap();
        (x, p) = kf.step(&x, &p, &u, &z);
        let g = gaussian(&belief);
        worst = worst.max((&g.mean - &x).amax()).max((&g.cov - &p).amax());
    }
    worst
}

/// `x' = A x + B u`, reward `−(xᵀQx + uᵀRu)`, terminal `−xᵀQ_f x`, with
/// exact derivatives.
pub struct Lqr {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub horizon: usize,
}

impl Mdp for Lqr {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn action_dim(&self) -> usize {
        self.b.ncols()
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn initial_state(&self) -> DVector<f64> {
        self.x0.clone()
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, _i: usize) -> locpomdp::Result<DVector<f64>> {
        Ok(&self.a * x + &self.b * u)
    }
    fn reward(&self, x: &DVector<f64>, u: &DVector<f64>, _i: usize) -> locpomdp::Result<f64> {
        Ok(-x.dot(&(&self.q * x)) - u.dot(&(&self.r * u)))
    }
    fn terminal_reward(&self, x: &DVector<f64>) -> locpomdp::Result<f64> {
        Ok(-x.dot(&(&self.qf * x)))
    }
    fn dynamics_derivatives(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _i: usize,
    ) -> locpomdp::Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.a.clone(), self.b.clone()))
    }
    fn reward_derivatives(&self, x: &DVector<f64>, u: &DVector<f64>, _i: usize) -> locpomdp::Result<RewardExpansion> {
        Ok(RewardExpansion {
            rx: &self.q * x * -2.0,
            ru: &self.r * u * -2.0,
            rxx: &self.q * -2.0,
            ruu: &self.r * -2.0,
            rux: DMatrix::zeros(self.b.ncols(), self.a.nrows()),
        })
    }
    fn terminal_derivatives(&self, x: &DVector<f64>) -> locpomdp::Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((&self.qf * x * -2.0, &self.qf * -2.0))
    }
}

pub fn random_lqr(n: usize, m: usize, seed: u64) -> Lqr {
    let mut rng = rng(seed);
    Lqr {
        a: DMatrix::identity(n, n) + random_matrix(n, n, 0.3, &mut rng),
        b: random_matrix(n, m, 1.0, &mut rng),
        q: random_spd(n, 0.1, &mut rng) * 0.5,
        r: random_spd(m, 0.5, &mut rng),
        qf: random_spd(n, 1.0, &mut rng),
        x0: random_matrix(n, 1, 2.0, &mut rng).column(0).into_owned(),
        horizon: 15,
    }
}

/// Smooth nonlinear model with state-dependent noise on both channels.
pub struct Smooth {
    pub mix: DMatrix<f64>,
    pub inner: DMatrix<f64>,
    pub input: DMatrix<f64>,
    pub sense: DMatrix<f64>,
    pub bend: DMatrix<f64>,
    pub tau: f64,
}

impl Smooth {
    pub fn random(n: usize, m: usize, p: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            mix: random_matrix(n, n, 1.0, rng),
            inner: random_matrix(n, n, 1.0, rng),
            input: random_matrix(n, m, 1.0, rng),
            sense: random_matrix(p, n, 1.0, rng),
            bend: random_matrix(p, n, 1.0, rng),
            tau: rng.random_range(0.01..0.2),
        }
    }
}

impl Dynamics for Smooth {
    fn state_dim(&self) -> usize {
        self.mix.nrows()
    }
    fn action_dim(&self) -> usize {
        self.input.ncols()
    }
    fn timestep(&self) -> f64 {
        self.tau
    }
    fn drift(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        &self.mix * (&self.inner * s).map(f64::tanh) + &self.input * a
    }
    fn noise_map(&self, s: &DVector<f64>, _a: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&s.map(|x| 0.3 + 0.1 * x * x))
    }
}

impl Observation for Smooth {
    fn obs_dim(&self) -> usize {
        self.sense.nrows()
    }
    fn mean(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.sense * s + (&self.bend * s).map(f64::sin) * 0.2
    }
    fn noise_cov(&self, s: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        let base = 0.5 + 0.05 * a.norm_squared();
        let d = (&self.bend * s).map(|x| base + 0.1 * x * x);
        DMatrix::from_diagonal(&d)
    }
}

/// Forwards to a domain and counts the errors raised along the way,
/// including during finite-difference probes and line-search candidates.
pub struct Counting<'a> {
    pub domain: &'a DomainSpec,
    pub vanishing: AtomicUsize,
    pub other: AtomicUsize,
}

impl<'a> Counting<'a> {
    pub fn new(domain: &'a DomainSpec) -> Self {
        Self {
            domain,
            vanishing: AtomicUsize::new(0),
            other: AtomicUsize::new(0),
        }
    }

    fn note<T>(&self, r: locpomdp::Result<T>) -> locpomdp::Result<T> {
        match &r {
            Err(locpomdp::Error::VanishingGradient(_)) => self.vanishing.fetch_add(1, Ordering::Relaxed),
            Err(_) => self.other.fetch_add(1, Ordering::Relaxed),
            Ok(_) => 0,
        };
        r
    }
}

impl Mdp for Counting<'_> {
    fn state_dim(&self) -> usize {
        Mdp::state_dim(self.domain)
    }
    fn action_dim(&self) -> usize {
        Mdp::action_dim(self.domain)
    }
    fn horizon(&self) -> usize {
        self.domain.horizon
    }
    fn initial_state(&self) -> DVector<f64> {
        self.domain.initial_state()
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, i: usize) -> locpomdp::Result<DVector<f64>> {
        self.note(self.domain.step(x, u, i))
    }
    fn reward(&self, x: &DVector<f64>, u: &DVector<f64>, i: usize) -> locpomdp::Result<f64> {
        self.note(self.domain.reward(x, u, i))
    }
    fn terminal_reward(&self, x: &DVector<f64>) -> locpomdp::Result<f64> {
        self.note(self.domain.terminal_reward(x))
    }
}

/// Largest relative gap between the marginalized update and the correction
/// at the predicted-mean observation over random `Smooth` instances.
pub fn marginalization_gap(instances: usize, seed: u64) -> f64 {
    use locpomdp::filter;

    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=3);
        let p = rng.random_range(1..=6);
        let model = Smooth::random(n, m, p, &mut rng);
        let b = GaussianBelief::new(
            random_matrix(n, 1, 2.0, &mut rng).column(0).into_owned(),
            random_spd(n, 0.01, &mut rng) * 0.5,
        )
        .expect("valid belief");
        let a = random_matrix(m, 1, 1.0, &mut rng).column(0).into_owned();
        let z = model.mean(&filter::euler_step(&b.mean, &a, &model).expect("finite step"));
        let marginal = filter::marginalized_update(&b, &a, &model, &model).expect("update");
        let corrected = filter::ekf_correct(&b, &a, &z, &model, &model).expect("correction");
        let scale = 1.0 + corrected.mean.amax().max(corrected.cov.amax());
        let err = (&marginal.mean - &corrected.mean).amax().max((&marginal.cov - &corrected.cov).amax());
        worst = worst.max(err / scale);
    }
    worst
}
