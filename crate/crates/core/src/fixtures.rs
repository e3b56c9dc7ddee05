//! Synthetic shape generators used as experiment and test fixtures.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use crate::cloud::{Axis, BendAxes, Point, PointCloud};
use crate::error::{Error, Result};
use crate::rng::{stream, streams};

/// Maximum radius of the centered bunny fixture.
pub const BUNNY_RADIUS: f64 = 3.5;

/// Height threshold of the two-level bunny weight rule.
pub const BUNNY_WEIGHT_THRESHOLD: f64 = 2.75;

/// Candidate attempts per active point in Poisson-disk sampling.
pub const POISSON_ATTEMPTS: usize = 30;

/// Outer radius of the candidate annulus as a multiple of the separation.
/// A thin annulus packs noticeably denser than the classic `[d, 2d]`.
pub const POISSON_ANNULUS: f64 = 1.1;

/// `n` points uniformly distributed in the solid ball of radius `radius`.
pub fn uniform_ball<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> Vec<Point> {
    (0..n)
        .map(|_| {
            let dir: [f64; 3] = UnitSphere.sample(rng);
            let r = radius * rng.random::<f64>().cbrt();
            Point::from(dir) * r
        })
        .collect()
}

/// Fibonacci lattice of `n` points on the unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<Point> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Point::new(rho * phi.cos(), rho * phi.sin(), z)
        })
        .collect()
}

/// Mean distance from each point to its nearest neighbor.
pub fn mean_nearest_neighbor(points: &[Point]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let total: f64 = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (p - q).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / points.len() as f64
}

/// Bridson-style dart throwing inside the ball of radius `radius` with minimum
/// separation `min_dist`.
pub fn poisson_disk_ball<R: Rng + ?Sized>(radius: f64, min_dist: f64, rng: &mut R) -> Vec<Point> {
    if radius <= 0.0 || min_dist <= 0.0 {
        return Vec::new();
    }
    let cell = min_dist / 3f64.sqrt();
    let g = (2.0 * radius / cell).ceil() as usize + 1;
    let mut grid: Vec<Option<usize>> = vec![None; g * g * g];
    let cell_of = |p: &Point| -> [usize; 3] {
        std::array::from_fn(|d| (((p[d] + radius) / cell).floor().max(0.0) as usize).min(g - 1))
    };
    let flat = |c: [usize; 3]| (c[0] * g + c[1]) * g + c[2];
    let mut points: Vec<Point> = Vec::new();
    let mut active: Vec<usize> = Vec::new();

    let first = uniform_ball(1, radius, rng)[0];
    grid[flat(cell_of(&first))] = Some(0);
    points.push(first);
    active.push(0);

    let d3 = min_dist.powi(3);
    while !active.is_empty() {
        let slot = rng.random_range(0..active.len());
        let base = points[active[slot]];
        let mut placed = false;
        for _ in 0..POISSON_ATTEMPTS {
            let dir: [f64; 3] = UnitSphere.sample(rng);
            let r = (d3 + rng.random::<f64>() * (POISSON_ANNULUS.powi(3) - 1.0) * d3).cbrt();
            let cand = base + Point::from(dir) * r;
            if cand.norm() > radius {
                continue;
            }
            let c = cell_of(&cand);
            let mut ok = true;
            'scan: for i in c[0].saturating_sub(2)..=(c[0] + 2).min(g - 1) {
                for j in c[1].saturating_sub(2)..=(c[1] + 2).min(g - 1) {
                    for k in c[2].saturating_sub(2)..=(c[2] + 2).min(g - 1) {
                        if let Some(idx) = grid[flat([i, j, k])] {
                            if (points[idx] - cand).norm() < min_dist {
                                ok = false;
                                break 'scan;
                            }
                        }
                    }
                }
            }
            if ok {
                grid[flat(c)] = Some(points.len());
                active.push(points.len());
                points.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            active.swap_remove(slot);
        }
    }
    points
}

/// Shell-plus-core sphere with its construction statistics.
#[derive(Clone, Debug)]
pub struct SphereFixture {
    pub cloud: PointCloud,
    /// Mean nearest-neighbor spacing of the shell.
    pub shell_spacing: f64,
    pub n_shell: usize,
    pub n_core: usize,
}

/// Unit Fibonacci shell of `n_shell` points filled with a Poisson-disk core
/// of radius `1 − d̄` and separation `d̄`, where `d̄` is the shell spacing.
pub fn sphere_fixture(n_shell: usize, seed: u64) -> Result<SphereFixture> {
    if n_shell < 4 {
        return Err(Error::InvalidConfig(format!(
            "n_shell must be at least 4, got {n_shell}"
        )));
    }
    let shell = fibonacci_sphere(n_shell);
    let d = mean_nearest_neighbor(&shell);
    let mut rng = stream(seed, streams::FIXTURE);
    let core = poisson_disk_ball(1.0 - d, d, &mut rng);
    let n_core = core.len();
    let mut points = shell;
    points.extend(core);
    Ok(SphereFixture {
        cloud: PointCloud::from_points(points)?,
        shell_spacing: d,
        n_shell,
        n_core,
    })
}

/// See [`sphere_fixture`].
pub fn gen_sphere_cloud(n_shell: usize, seed: u64) -> Result<PointCloud> {
    Ok(sphere_fixture(n_shell, seed)?.cloud)
}

/// Uniform solid ellipsoid with the given semi-axes.
pub fn ellipsoid(n: usize, semi_axes: [f64; 3], seed: u64) -> Result<PointCloud> {
    let mut rng = stream(seed, streams::FIXTURE);
    let pts = uniform_ball(n, 1.0, &mut rng)
        .into_iter()
        .map(|p| Point::new(p.x * semi_axes[0], p.y * semi_axes[1], p.z * semi_axes[2]))
        .collect();
    PointCloud::from_points(pts)
}

/// Long-axis conventions of the crescent fixture.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrescentVariant {
    /// Long axis `z`, bent toward `x`.
    #[default]
    LongZ,
    /// Long axis `y`, bent toward `x`.
    LongY,
}

impl CrescentVariant {
    pub fn long_axis(self) -> Axis {
        match self {
            CrescentVariant::LongZ => Axis::Z,
            CrescentVariant::LongY => Axis::Y,
        }
    }
}

/// Crescent construction parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrescentSpec {
    pub n: usize,
    pub elongation: f64,
    pub bend_radius: f64,
    pub variant: CrescentVariant,
    /// Mirror-symmetrize the ball samples across the plane orthogonal to the
    /// third axis so the crescent has an exact two-fold rotational symmetry.
    pub symmetric: bool,
    pub seed: u64,
}

impl Default for CrescentSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            elongation: 3.0,
            bend_radius: 2.0,
            variant: CrescentVariant::LongZ,
            symmetric: false,
            seed: 0,
        }
    }
}

/// The axis that is neither the long axis nor the bend-offset axis.
fn third_axis(long: Axis) -> Axis {
    match long {
        Axis::Z => Axis::Y,
        Axis::Y => Axis::Z,
        Axis::X => Axis::Y,
    }
}

/// Unit-ball samples elongated along the long axis and bent along an arc.
pub fn crescent(spec: &CrescentSpec) -> Result<PointCloud> {
    let mut rng = stream(spec.seed, streams::FIXTURE);
    let long = spec.variant.long_axis();
    let pts = if spec.symmetric {
        let half = uniform_ball(spec.n.div_ceil(2), 1.0, &mut rng);
        let k = third_axis(long).index();
        let mut pts = half.clone();
        pts.extend(half.into_iter().map(|mut p| {
            p[k] = -p[k];
            p
        }));
        // An odd count drops the last mirrored point.
        pts.truncate(spec.n);
        pts
    } else {
        uniform_ball(spec.n, 1.0, &mut rng)
    };
    let cloud = PointCloud::from_points(pts)?;
    cloud
        .elongate(&long.unit(), spec.elongation)?
        .arc_bend(spec.bend_radius, BendAxes::along(long, Axis::X))
}

/// Two-level weights: 1 where the axis coordinate is `≥ 0`, 2 elsewhere.
pub fn half_weights(cloud: &PointCloud, axis: Axis) -> Vec<f64> {
    cloud
        .points()
        .iter()
        .map(|p| if p[axis.index()] >= 0.0 { 1.0 } else { 2.0 })
        .collect()
}

/// Ellipsoidal component of the procedural bunny.
struct Blob {
    center: Vector3<f64>,
    semi: Vector3<f64>,
    rot: Matrix3<f64>,
}

impl Blob {
    fn new(center: [f64; 3], semi: [f64; 3], euler_deg: [f64; 3]) -> Self {
        let r = Rotation3::from_euler_angles(
            euler_deg[0].to_radians(),
            euler_deg[1].to_radians(),
            euler_deg[2].to_radians(),
        );
        Self {
            center: Vector3::from(center),
            semi: Vector3::from(semi),
            rot: *r.matrix(),
        }
    }

    fn contains(&self, p: &Point) -> bool {
        let local = self.rot.transpose() * (p - self.center);
        local.component_div(&self.semi).norm_squared() < 1.0
    }

    fn surface_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let u: [f64; 3] = UnitSphere.sample(rng);
        self.center + self.rot * Vector3::from(u).component_mul(&self.semi)
    }

    /// Knud Thomsen's approximation of the ellipsoid surface area.
    fn area(&self) -> f64 {
        let p = 1.6075;
        let (a, b, c) = (
            self.semi.x.powf(p),
            self.semi.y.powf(p),
            self.semi.z.powf(p),
        );
        4.0 * std::f64::consts::PI * ((a * b + a * c + b * c) / 3.0).powf(1.0 / p)
    }
}

fn bunny_blobs() -> Vec<Blob> {
    vec![
        // body and haunch
        Blob::new([0.0, 0.0, 0.0], [1.1, 0.8, 0.85], [0.0, 0.0, 0.0]),
        Blob::new([-0.5, 0.2, -0.15], [0.65, 0.5, 0.6], [0.0, 0.0, 10.0]),
        // head turned toward +y
        Blob::new([1.05, 0.25, 0.75], [0.5, 0.4, 0.42], [0.0, -10.0, 25.0]),
        // ears, deliberately unequal
        Blob::new([0.85, 0.45, 1.55], [0.13, 0.09, 0.55], [-20.0, -15.0, 0.0]),
        Blob::new([1.05, 0.05, 1.45], [0.13, 0.09, 0.48], [10.0, -35.0, 0.0]),
        // tail and front paw
        Blob::new([-1.15, -0.05, 0.15], [0.22, 0.22, 0.22], [0.0, 0.0, 0.0]),
        Blob::new([0.8, -0.25, -0.7], [0.3, 0.18, 0.15], [0.0, 0.0, -15.0]),
    ]
}

/// Procedural chiral bunny: surface samples of a union of ellipsoids (body,
/// turned head, two unequal ears, tail, paw), centered and scaled so its
/// maximum radius is [`BUNNY_RADIUS`].
pub fn bunny(n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidCloud("bunny needs at least one point".into()));
    }
    let blobs = bunny_blobs();
    let areas: Vec<f64> = blobs.iter().map(Blob::area).collect();
    let total: f64 = areas.iter().sum();
    let mut rng = stream(seed, streams::FIXTURE);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let mut u = rng.random::<f64>() * total;
        let mut i = 0;
        while i + 1 < blobs.len() && u >= areas[i] {
            u -= areas[i];
            i += 1;
        }
        let p = blobs[i].surface_point(&mut rng);
        let buried = blobs
            .iter()
            .enumerate()
            .any(|(j, b)| j != i && b.contains(&p));
        if !buried {
            pts.push(p);
        }
    }
    let cloud = PointCloud::from_points(pts)?;
    let com = cloud.center_of_mass();
    let r = cloud.max_radius();
    Ok(cloud
        .translate(&-com)
        .transform(&(Matrix3::identity() * (BUNNY_RADIUS / r))))
}

/// Weight 1 for points with `z ≥ threshold`, 2 otherwise.
pub fn bunny_weights(cloud: &PointCloud, threshold: f64) -> Vec<f64> {
    cloud
        .points()
        .iter()
        .map(|p| if p.z >= threshold { 1.0 } else { 2.0 })
        .collect()
}

/// Bunny carrying the two-level height weights.
pub fn weighted_bunny(n: usize, seed: u64) -> Result<PointCloud> {
    let b = bunny(n, seed)?;
    let w = bunny_weights(&b, BUNNY_WEIGHT_THRESHOLD);
    b.with_weights(w)
}

/// Axisymmetric ring surface: `n_rings` equal-area rings about the `x` axis,
/// `n_phi` azimuths per ring (stratified with a small seeded jitter), then
/// `x` scaled by `elongation`.
pub fn ring_ellipsoid(
    n_rings: usize,
    n_phi: usize,
    elongation: f64,
    seed: u64,
) -> Result<PointCloud> {
    if n_rings == 0 || n_phi < 3 {
        return Err(Error::InvalidConfig(format!(
            "ring fixture needs n_rings ≥ 1 and n_phi ≥ 3 (got {n_rings}, {n_phi})"
        )));
    }
    let mut rng = stream(seed, streams::JITTER);
    let mut pts = Vec::with_capacity(n_rings * n_phi);
    for k in 0..n_rings {
        let x = -1.0 + (2 * k + 1) as f64 / n_rings as f64;
        let rho = (1.0 - x * x).sqrt();
        for j in 0..n_phi {
            let phi = std::f64::consts::TAU * (j as f64 + rng.random::<f64>()) / n_phi as f64;
            pts.push(Point::new(elongation * x, rho * phi.cos(), rho * phi.sin()));
        }
    }
    PointCloud::from_points(pts)
}

/// Adds isotropic Gaussian noise of standard deviation `sigma`.
pub fn add_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    let mut rng = stream(seed, streams::NOISE);
    let pts = cloud
        .points()
        .iter()
        .map(|p| p + Point::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    PointCloud::new(pts, cloud.weights().to_vec())
}

/// Random reordering of the points.
pub fn shuffled(cloud: &PointCloud, seed: u64) -> Result<PointCloud> {
    let mut perm: Vec<usize> = (0..cloud.len()).collect();
    perm.shuffle(&mut stream(seed, streams::PERMUTE));
    cloud.permute(&perm)
}

/// Random subset of `m` points (order preserved).
pub fn subsample(cloud: &PointCloud, m: usize, seed: u64) -> Result<PointCloud> {
    if m == 0 || m > cloud.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot subsample {m} of {} points",
            cloud.len()
        )));
    }
    let mut idx: Vec<usize> = (0..cloud.len()).collect();
    idx.shuffle(&mut stream(seed, streams::SUBSAMPLE));
    idx.truncate(m);
    idx.sort_unstable();
    cloud.select(&idx)
}
