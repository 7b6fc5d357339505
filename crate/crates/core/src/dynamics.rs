//! Event-driven dynamics of equal-mass hard disks with perfectly elastic
//! disk–disk and disk–wall collisions.
//!
//! Collisions are located in exact continuous time. Between events every disk
//! moves ballistically; the occupancy is sampled on the `k * dt` grid.

use crate::domain::{initial_placement, DomainError, Particle, SimConfig, SubdomainGrid, Vec2, SUBDOMAINS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Geometric slack for overlap and contact checks.
pub const EPS_GEOM: f64 = 1e-9;
/// Events closer than this are treated as simultaneous and ordered by key.
pub const SIMULTANEITY_WINDOW: f64 = 1e-12;
pub const MAX_EVENTS_PER_STEP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("more than {MAX_EVENTS_PER_STEP} collision events while advancing from t={from} to t={to}")]
    TooManyEvents { from: f64, to: f64 },
    #[error("target time {target} precedes state time {now}")]
    TimeReversal { now: f64, target: f64 },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Wall {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Wall(usize, Wall),
    Pair(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionEvent {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub time: f64,
    pub particles: Vec<Particle>,
}

impl SystemState {
    pub fn kinetic_energy(&self) -> f64 {
        self.particles.iter().map(|p| 0.5 * p.velocity.norm_squared()).sum()
    }

    pub fn momentum(&self) -> Vec2 {
        self.particles.iter().map(|p| p.velocity).sum()
    }

    /// Largest `2R - distance` over all pairs (negative when nothing touches).
    pub fn max_penetration(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, a) in self.particles.iter().enumerate() {
            for b in &self.particles[i + 1..] {
                let contact = a.radius + b.radius;
                worst = worst.max(contact - (a.position - b.position).norm());
            }
        }
        worst
    }

    /// Largest distance by which a centre sits outside `[R, L - R]^2`.
    pub fn containment_violation(&self, side_length: f64) -> f64 {
        self.particles
            .iter()
            .map(|p| {
                let (r, q) = (p.radius, p.position);
                (r - q.x).max(r - q.y).max(q.x - (side_length - r)).max(q.y - (side_length - r))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Earliest time at which the disk touches a wall it is moving toward.
pub fn time_to_wall(p: &Particle, side_length: f64) -> Option<(f64, Wall)> {
    let hi = side_length - p.radius;
    let axis = |pos: f64, vel: f64, low: Wall, high: Wall| -> Option<(f64, Wall)> {
        if vel < 0.0 {
            Some((((pos - p.radius) / -vel).max(0.0), low))
        } else if vel > 0.0 {
            Some((((hi - pos) / vel).max(0.0), high))
        } else {
            None
        }
    };
    let x = axis(p.position.x, p.velocity.x, Wall::Left, Wall::Right);
    let y = axis(p.position.y, p.velocity.y, Wall::Bottom, Wall::Top);
    match (x, y) {
        (Some(a), Some(b)) => Some(if b.0 < a.0 { b } else { a }),
        (a, b) => a.or(b),
    }
}

/// Time until two disks touch, if they are approaching and will meet.
///
/// A pair already closer than contact and still approaching is an immediate
/// (zero-time) collision.
pub fn time_to_pair(a: &Particle, b: &Particle) -> Option<f64> {
    let dx = b.position - a.position;
    let dv = b.velocity - a.velocity;
    let closing = dx.dot(&dv);
    if closing >= 0.0 {
        return None;
    }
    let contact = a.radius + b.radius;
    let gap = dx.norm_squared() - contact * contact;
    if gap <= 0.0 {
        return Some(0.0);
    }
    let speed2 = dv.norm_squared();
    let disc = closing * closing - speed2 * gap;
    if disc < 0.0 {
        return None;
    }
    // Equivalent to (-closing - sqrt(disc)) / speed2 without cancellation.
    Some(gap / (-closing + disc.sqrt()))
}

/// Specular reflection off a wall.
pub fn resolve_wall(p: &Particle, wall: Wall) -> Particle {
    let mut out = *p;
    match wall {
        Wall::Left | Wall::Right => out.velocity.x = -out.velocity.x,
        Wall::Bottom | Wall::Top => out.velocity.y = -out.velocity.y,
    }
    out
}

/// Equal-mass elastic exchange along the line of centres.
///
/// A pair that is not closing along the normal is returned unchanged.
pub fn resolve_pair(a: &Particle, b: &Particle) -> (Particle, Particle) {
    let delta = b.position - a.position;
    let dist = delta.norm();
    if dist == 0.0 {
        return (*a, *b);
    }
    let n = delta / dist;
    let s = (a.velocity - b.velocity).dot(&n);
    if s <= 0.0 {
        return (*a, *b);
    }
    let (mut a2, mut b2) = (*a, *b);
    a2.velocity -= s * n;
    b2.velocity += s * n;
    (a2, b2)
}

/// A running system with cached collision predictions.
///
/// Predictions are absolute times. After each event only the rows of the
/// particles involved are recomputed.
#[derive(Debug, Clone)]
pub struct Simulation {
    state: SystemState,
    side_length: f64,
    wall_next: Vec<Option<(f64, Wall)>>,
    // upper-triangular, row-major over i < j
    pair_next: Vec<Option<f64>>,
    next: Option<CollisionEvent>,
    events: u64,
}

fn pair_slot(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl Simulation {
    pub fn new(state: SystemState, side_length: f64) -> Self {
        let n = state.particles.len();
        let mut sim = Self {
            state,
            side_length,
            wall_next: vec![None; n],
            pair_next: vec![None; n * n.saturating_sub(1) / 2],
            next: None,
            events: 0,
        };
        for i in 0..n {
            sim.predict_for(i);
        }
        sim.next = sim.earliest();
        sim
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn into_state(self) -> SystemState {
        self.state
    }

    pub fn events_processed(&self) -> u64 {
        self.events
    }

    fn predict_for(&mut self, i: usize) {
        let n = self.state.particles.len();
        let now = self.state.time;
        let ps = &self.state.particles;
        self.wall_next[i] = time_to_wall(&ps[i], self.side_length).map(|(t, w)| (now + t, w));
        for j in 0..n {
            if j == i {
                continue;
            }
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            self.pair_next[pair_slot(n, lo, hi)] = time_to_pair(&ps[lo], &ps[hi]).map(|t| now + t);
        }
    }

    /// Next event in (time, kind, indices) order, with near-ties broken by key.
    fn earliest(&self) -> Option<CollisionEvent> {
        let n = self.state.particles.len();
        let mut t_min = f64::INFINITY;
        for &(t, _) in self.wall_next.iter().flatten() {
            t_min = t_min.min(t);
        }
        for &t in self.pair_next.iter().flatten() {
            t_min = t_min.min(t);
        }
        if !t_min.is_finite() {
            return None;
        }
        let cutoff = t_min + SIMULTANEITY_WINDOW;
        for (i, w) in self.wall_next.iter().enumerate() {
            if let Some((t, wall)) = *w {
                if t <= cutoff {
                    return Some(CollisionEvent { time: t, kind: EventKind::Wall(i, wall) });
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if let Some(t) = self.pair_next[pair_slot(n, i, j)] {
                    if t <= cutoff {
                        return Some(CollisionEvent { time: t, kind: EventKind::Pair(i, j) });
                    }
                }
            }
        }
        unreachable!("minimum time exists but no event found")
    }

    fn drift(&mut self, to: f64) {
        let dt = to - self.state.time;
        if dt > 0.0 {
            for p in &mut self.state.particles {
                p.position += p.velocity * dt;
            }
            self.state.time = to;
        }
    }

    /// Process every event up to `t_target`, then drift to it.
    pub fn advance_to(&mut self, t_target: f64) -> Result<(), DynamicsError> {
        let from = self.state.time;
        if t_target < from {
            return Err(DynamicsError::TimeReversal { now: from, target: t_target });
        }
        let mut handled = 0usize;
        while let Some(ev) = self.next {
            if ev.time > t_target {
                break;
            }
            handled += 1;
            if handled > MAX_EVENTS_PER_STEP {
                return Err(DynamicsError::TooManyEvents { from, to: t_target });
            }
            self.drift(ev.time);
            match ev.kind {
                EventKind::Wall(i, wall) => {
                    let ps = &mut self.state.particles;
                    ps[i] = resolve_wall(&ps[i], wall);
                    self.predict_for(i);
                }
                EventKind::Pair(i, j) => {
                    let ps = &mut self.state.particles;
                    let (a, b) = resolve_pair(&ps[i], &ps[j]);
                    ps[i] = a;
                    ps[j] = b;
                    self.predict_for(i);
                    self.predict_for(j);
                }
            }
            self.events += 1;
            self.next = self.earliest();
        }
        self.drift(t_target);
        Ok(())
    }
}

/// One-shot form of [`Simulation::advance_to`].
pub fn advance_to(state: SystemState, side_length: f64, t_target: f64) -> Result<SystemState, DynamicsError> {
    let mut sim = Simulation::new(state, side_length);
    sim.advance_to(t_target)?;
    Ok(sim.into_state())
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a per-task seed from a base seed and a path of indices.
pub fn derive_seed(base_seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(base_seed), |acc, &x| mix64(acc ^ mix64(x)))
}

/// Occupancy counts of the nine subdomains at each sample time `t_k`, k = 0..=N.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancySeries {
    pub samples: Vec<[u8; SUBDOMAINS]>,
}

impl OccupancySeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The series of one subdomain (1-based index).
    pub fn subdomain(&self, index: usize) -> Vec<u8> {
        self.samples.iter().map(|s| s[index - 1]).collect()
    }
}

/// Initial state: fixed layout, uniform random directions at fixed speed.
pub fn initial_state(config: &SimConfig, realization_seed: u64) -> Result<SystemState, DomainError> {
    let mut particles = initial_placement(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(realization_seed);
    for p in &mut particles {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        p.velocity = Vec2::new(theta.cos(), theta.sin()) * config.speed;
    }
    Ok(SystemState { time: 0.0, particles })
}

fn occupancy(grid: &SubdomainGrid, state: &SystemState) -> Result<[u8; SUBDOMAINS], DomainError> {
    let mut eta = [0u8; SUBDOMAINS];
    for p in &state.particles {
        eta[grid.subdomain_of(p.position)? - 1] += 1;
    }
    Ok(eta)
}

/// Run one realization, calling `observe(k, state, eta)` at every sample.
pub fn run_realization_with<F>(config: &SimConfig, realization_seed: u64, mut observe: F) -> Result<(), DynamicsError>
where
    F: FnMut(usize, &SystemState, &[u8; SUBDOMAINS]),
{
    let grid = SubdomainGrid::new(config.side_length);
    let mut sim = Simulation::new(initial_state(config, realization_seed)?, config.side_length);
    let eta = occupancy(&grid, sim.state())?;
    observe(0, sim.state(), &eta);
    for k in 1..=config.steps {
        sim.advance_to(k as f64 * config.dt)?;
        let eta = occupancy(&grid, sim.state())?;
        observe(k, sim.state(), &eta);
    }
    Ok(())
}

pub fn run_realization(config: &SimConfig, realization_seed: u64) -> Result<OccupancySeries, DynamicsError> {
    let mut samples = Vec::with_capacity(config.steps + 1);
    run_realization_with(config, realization_seed, |_, _, eta| samples.push(*eta))?;
    Ok(OccupancySeries { samples })
}
