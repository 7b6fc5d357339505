//! Square domain geometry, its 3×3 partition into typed subdomains and the
//! fixed initial particle layout.
//!
//! Subdomains are numbered 1..=9 row-major from the bottom-left corner:
//!
//! ```text
//!   7 8 9
//!   4 5 6
//!   1 2 3
//! ```

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;

/// Number of disks in the system.
pub const PARTICLE_COUNT: usize = 27;
/// Cells per axis.
pub const GRID: usize = 3;
/// Total number of subdomains.
pub const SUBDOMAINS: usize = GRID * GRID;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("subdomain index {0} out of range 1..=9")]
    IndexOutOfRange(usize),
    #[error("point ({x}, {y}) lies outside the domain [0, {side}]^2")]
    PointOutside { x: f64, y: f64, side: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("initial placement overlaps: {0}")]
    Overlap(String),
}

/// All parameters of one simulation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub radius: f64,
    pub side_length: f64,
    pub speed: f64,
    pub dt: f64,
    pub steps: usize,
    pub realizations: usize,
    pub n_states: usize,
    pub base_seed: u64,
    /// Leading sample steps excluded from time averages and counters.
    pub burn_in: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            radius: 0.5,
            side_length: 30.0,
            speed: 8.0,
            dt: 0.0125,
            steps: 200_000,
            realizations: 6000,
            n_states: 13,
            base_seed: 0x5eed_d15c_c4a1_0001,
            burn_in: 0,
        }
    }
}

impl SimConfig {
    pub fn particle_count(&self) -> usize {
        PARTICLE_COUNT
    }

    pub fn grid(&self) -> usize {
        GRID
    }

    pub fn cell_size(&self) -> f64 {
        self.side_length / GRID as f64
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |msg: String| Err(DomainError::InvalidConfig(msg));
        if !(self.radius > 0.0 && self.radius <= 1.0) {
            return bad(format!("radius {} not in (0, 1]", self.radius));
        }
        if !(self.side_length > 0.0 && self.speed > 0.0 && self.dt > 0.0) {
            return bad("side_length, speed and dt must be positive".into());
        }
        if self.dt * self.speed >= self.cell_size() {
            return bad(format!(
                "dt*speed = {} must be below the cell size {}",
                self.dt * self.speed,
                self.cell_size()
            ));
        }
        if self.n_states > PARTICLE_COUNT {
            return bad(format!("n_states {} exceeds {PARTICLE_COUNT}", self.n_states));
        }
        if self.n_states == 0 {
            return bad("n_states must be at least 1".into());
        }
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.burn_in >= self.steps {
            return bad(format!("burn_in {} must be below steps {}", self.burn_in, self.steps));
        }
        Ok(())
    }
}

/// Subdomain classification by the number of exterior walls it touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubdomainKind {
    /// Two exterior walls (L).
    Corner,
    /// One exterior wall (I).
    OneWall,
    /// No exterior walls (C).
    Center,
}

impl SubdomainKind {
    pub const ALL: [SubdomainKind; 3] = [Self::Corner, Self::OneWall, Self::Center];

    pub fn name(self) -> &'static str {
        match self {
            Self::Corner => "corner",
            Self::OneWall => "one_wall",
            Self::Center => "center",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Subdomain indices (1-based) of this kind, ascending.
    pub fn members(self) -> &'static [usize] {
        match self {
            Self::Corner => &[1, 3, 7, 9],
            Self::OneWall => &[2, 4, 6, 8],
            Self::Center => &[5],
        }
    }

    /// Position of this kind in [`SubdomainKind::ALL`].
    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for SubdomainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn kind_of(index: usize) -> Result<SubdomainKind, DomainError> {
    match index {
        5 => Ok(SubdomainKind::Center),
        1 | 3 | 7 | 9 => Ok(SubdomainKind::Corner),
        2 | 4 | 6 | 8 => Ok(SubdomainKind::OneWall),
        _ => Err(DomainError::IndexOutOfRange(index)),
    }
}

/// Edge-sharing neighbours of a subdomain, ascending.
pub fn adjacency_of(index: usize) -> Result<Vec<usize>, DomainError> {
    if !(1..=SUBDOMAINS).contains(&index) {
        return Err(DomainError::IndexOutOfRange(index));
    }
    let (col, row) = ((index - 1) % GRID, (index - 1) / GRID);
    let mut out = Vec::with_capacity(4);
    if row > 0 {
        out.push(index - GRID);
    }
    if col > 0 {
        out.push(index - 1);
    }
    if col + 1 < GRID {
        out.push(index + 1);
    }
    if row + 1 < GRID {
        out.push(index + GRID);
    }
    Ok(out)
}

/// The partitioned square.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainGrid {
    side_length: f64,
    cell_size: f64,
}

impl SubdomainGrid {
    pub fn new(side_length: f64) -> Self {
        Self { side_length, cell_size: side_length / GRID as f64 }
    }

    pub fn side_length(&self) -> f64 {
        self.side_length
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn index_to_kind(&self, index: usize) -> Result<SubdomainKind, DomainError> {
        kind_of(index)
    }

    pub fn adjacency(&self, index: usize) -> Result<Vec<usize>, DomainError> {
        adjacency_of(index)
    }

    /// Lower-left corner of a cell.
    pub fn cell_origin(&self, index: usize) -> Result<Vec2, DomainError> {
        if !(1..=SUBDOMAINS).contains(&index) {
            return Err(DomainError::IndexOutOfRange(index));
        }
        let (col, row) = ((index - 1) % GRID, (index - 1) / GRID);
        Ok(Vec2::new(col as f64 * self.cell_size, row as f64 * self.cell_size))
    }

    /// Cells are half-open `[k*cell, (k+1)*cell)` and closed at the outer wall.
    pub fn subdomain_of(&self, point: Vec2) -> Result<usize, DomainError> {
        let side = self.side_length;
        if !(0.0..=side).contains(&point.x) || !(0.0..=side).contains(&point.y) {
            return Err(DomainError::PointOutside { x: point.x, y: point.y, side });
        }
        let col = ((point.x / self.cell_size) as usize).min(GRID - 1);
        let row = ((point.y / self.cell_size) as usize).min(GRID - 1);
        Ok(1 + col + GRID * row)
    }
}

pub fn subdomain_of(point: Vec2, grid: &SubdomainGrid) -> Result<usize, DomainError> {
    grid.subdomain_of(point)
}

/// A disk. All disks in a system share the same radius and mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

impl Particle {
    pub fn at_rest(position: Vec2, radius: f64) -> Self {
        Self { position, velocity: Vec2::zeros(), radius }
    }
}

/// Three disks per cell on the cell's horizontal midline, a quarter cell apart.
///
/// The layout does not depend on the radius or the seed.
pub fn initial_placement(config: &SimConfig) -> Result<Vec<Particle>, DomainError> {
    config.validate()?;
    let grid = SubdomainGrid::new(config.side_length);
    let cell = grid.cell_size();
    let mut particles = Vec::with_capacity(PARTICLE_COUNT);
    for index in 1..=SUBDOMAINS {
        let centre = grid.cell_origin(index)? + Vec2::new(cell / 2.0, cell / 2.0);
        for offset in [-cell / 4.0, 0.0, cell / 4.0] {
            particles.push(Particle::at_rest(centre + Vec2::new(offset, 0.0), config.radius));
        }
    }

    let r = config.radius;
    for (i, p) in particles.iter().enumerate() {
        let pos = p.position;
        if pos.x < r || pos.y < r || pos.x > config.side_length - r || pos.y > config.side_length - r {
            return Err(DomainError::Overlap(format!("particle {i} within {r} of a wall")));
        }
        for (j, q) in particles.iter().enumerate().skip(i + 1) {
            if (pos - q.position).norm() < 2.0 * r {
                return Err(DomainError::Overlap(format!("particles {i} and {j}")));
            }
        }
    }
    Ok(particles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn kinds_match_layout() {
        assert_eq!(kind_of(5).unwrap(), SubdomainKind::Center);
        assert_eq!(kind_of(1).unwrap(), SubdomainKind::Corner);
        assert_eq!(kind_of(2).unwrap(), SubdomainKind::OneWall);
        assert!(kind_of(0).is_err());
        assert!(kind_of(10).is_err());
        for kind in SubdomainKind::ALL {
            for &i in kind.members() {
                assert_eq!(kind_of(i).unwrap(), kind);
            }
        }
    }

    #[test]
    fn classification_examples() {
        let grid = SubdomainGrid::new(30.0);
        assert_eq!(grid.subdomain_of(Vec2::new(0.0, 0.0)).unwrap(), 1);
        assert_eq!(grid.subdomain_of(Vec2::new(15.0, 15.0)).unwrap(), 5);
        assert_eq!(grid.subdomain_of(Vec2::new(10.0, 0.0)).unwrap(), 2);
        assert_eq!(grid.subdomain_of(Vec2::new(30.0, 30.0)).unwrap(), 9);
        assert_eq!(grid.subdomain_of(Vec2::new(30.0, 10.0)).unwrap(), 6);
        assert!(grid.subdomain_of(Vec2::new(-1e-9, 3.0)).is_err());
        assert!(grid.subdomain_of(Vec2::new(3.0, 30.000001)).is_err());
    }

    /// Independent interval-comparison classifier.
    fn classify_by_intervals(p: Vec2, side: f64) -> usize {
        let cell = side / 3.0;
        let bin = |v: f64| {
            if v < cell {
                0
            } else if v < 2.0 * cell {
                1
            } else {
                2
            }
        };
        1 + bin(p.x) + 3 * bin(p.y)
    }

    #[test]
    fn boundary_points_follow_half_open_rule() {
        let grid = SubdomainGrid::new(30.0);
        for a in [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0] {
            for b in [0.0, 10.0, 20.0, 30.0] {
                for p in [Vec2::new(a, b), Vec2::new(b, a)] {
                    assert_eq!(grid.subdomain_of(p).unwrap(), classify_by_intervals(p, 30.0), "{p:?}");
                }
            }
        }
    }

    #[test]
    fn random_points_match_interval_oracle() {
        let grid = SubdomainGrid::new(30.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000_000 {
            let p = Vec2::new(rng.random_range(0.0..30.0), rng.random_range(0.0..30.0));
            assert_eq!(grid.subdomain_of(p).unwrap(), classify_by_intervals(p, 30.0));
        }
    }

    #[test]
    fn adjacency_examples_and_symmetry() {
        assert_eq!(adjacency_of(5).unwrap(), vec![2, 4, 6, 8]);
        assert_eq!(adjacency_of(1).unwrap(), vec![2, 4]);
        assert_eq!(adjacency_of(6).unwrap(), vec![3, 5, 9]);
        let mut total = 0;
        for i in 1..=9 {
            let n = adjacency_of(i).unwrap();
            total += n.len();
            let expected = match kind_of(i).unwrap() {
                SubdomainKind::Corner => 2,
                SubdomainKind::OneWall => 3,
                SubdomainKind::Center => 4,
            };
            assert_eq!(n.len(), expected);
            for j in n {
                assert!(adjacency_of(j).unwrap().contains(&i));
            }
        }
        assert_eq!(total, 24);
        assert!(adjacency_of(0).is_err());
    }

    #[test]
    fn placement_layout() {
        let cfg = SimConfig::default();
        let ps = initial_placement(&cfg).unwrap();
        assert_eq!(ps.len(), 27);
        let first: Vec<_> = ps[..3].iter().map(|p| (p.position.x, p.position.y)).collect();
        assert_eq!(first, vec![(2.5, 5.0), (5.0, 5.0), (7.5, 5.0)]);

        let grid = SubdomainGrid::new(30.0);
        let mut counts = [0usize; 9];
        for p in &ps {
            counts[grid.subdomain_of(p.position).unwrap() - 1] += 1;
        }
        assert_eq!(counts, [3; 9]);

        let mut min_d = f64::INFINITY;
        let mut min_wall = f64::INFINITY;
        for (i, p) in ps.iter().enumerate() {
            let q = p.position;
            min_wall = min_wall.min(q.x).min(q.y).min(30.0 - q.x).min(30.0 - q.y);
            for o in &ps[i + 1..] {
                min_d = min_d.min((q - o.position).norm());
            }
        }
        assert_eq!(min_d, 2.5);
        assert_eq!(min_wall, 2.5);
        assert!((min_d - 2.0 * 0.9 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn placement_is_deterministic_and_seed_free() {
        let a = initial_placement(&SimConfig::default()).unwrap();
        let b = initial_placement(&SimConfig { base_seed: 99, radius: 0.9, ..SimConfig::default() }).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.position.x.to_bits(), q.position.x.to_bits());
            assert_eq!(p.position.y.to_bits(), q.position.y.to_bits());
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        assert!(SimConfig { radius: 0.0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { radius: 1.5, ..Default::default() }.validate().is_err());
        assert!(SimConfig { n_states: 28, ..Default::default() }.validate().is_err());
        assert!(SimConfig { dt: 2.0, ..Default::default() }.validate().is_err());
    }
}
