//! Cell-centered finite-volume solver for
//! `∂G/∂t = ∇²G − u(t)·∇G + S(z, t)` on a square with homogeneous Neumann
//! walls and `G(z, 0) = 0`.
//!
//! Time marching is Strang split: a convection half step, a Crank–Nicolson
//! diffusion step carrying the source at the step midpoint, and a second
//! convection half step. Convection uses κ = 1/3 upwind-biased face
//! reconstruction advanced with SSP-RK3; wall ghost cells mirror the interior
//! (zero normal gradient). The diffusion system is solved directly in the
//! cosine basis of the Neumann Laplacian.

use std::cell::RefCell;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest admissible `(|u_x| + |u_y|) · (Δt/2) / Δz` for a convection half step.
pub const COURANT_LIMIT: f64 = 1.0;


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Velocity {
    Zero,
    /// `u_x = u_y = rate · t`.
    LinearRamp { rate: f64 },
    Constant { ux: f64, uy: f64 },
}

impl Velocity {
    pub fn at(&self, t: f64) -> [f64; 2] {
        match *self {
            Velocity::Zero => [0.0, 0.0],
            Velocity::LinearRamp { rate } => [rate * t, rate * t],
            Velocity::Constant { ux, uy } => [ux, uy],
        }
    }

    /// Largest `|u_x| + |u_y|` on `[0, t_end]`.
    pub fn max_speed_sum(&self, t_end: f64) -> f64 {
        let a = self.at(0.0);
        let b = self.at(t_end);
        (a[0].abs() + a[1].abs()).max(b[0].abs() + b[1].abs())
    }
}

/// Square domain `[lo, hi]²`, uniform cells and time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FvGridSpec {
    pub lo: f64,
    pub hi: f64,
    pub dz: f64,
    pub dt: f64,
    pub velocity: Velocity,
}

impl FvGridSpec {
    pub fn cells(&self) -> Result<usize> {
        if !(self.dz > 0.0 && self.dt > 0.0 && self.hi > self.lo) {
            return Err(Error::InvalidArgument(format!("degenerate grid {self:?}")));
        }
        let n = (self.hi - self.lo) / self.dz;
        let rounded = n.round();
        if (n - rounded).abs() > 1e-6 || rounded < 2.0 {
            return Err(Error::InvalidArgument(format!(
                "domain width {} is not a whole number (≥ 2) of cells of size {}",
                self.hi - self.lo,
                self.dz
            )));
        }
        Ok(rounded as usize)
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.dz
    }

    pub fn courant(&self, t_end: f64) -> f64 {
        self.velocity.max_speed_sum(t_end) * 0.5 * self.dt / self.dz
    }

    pub fn check_stability(&self, t_end: f64) -> Result<()> {
        let courant = self.courant(t_end);
        if courant > COURANT_LIMIT {
            return Err(Error::StabilityViolation {
                dt: self.dt,
                courant,
                limit: COURANT_LIMIT,
            });
        }
        Ok(())
    }
}

/// Gaussian plume source `θ_s/(2π θ_h²) exp(−|z − (θ_x, θ_y)|²/(2θ_h²))`,
/// active from `switch_on` onwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub strength: f64,
    #[serde(default)]
    pub switch_on: f64,
}

impl SourceParams {
    pub fn density(&self, zx: f64, zy: f64) -> f64 {
        let w2 = self.width * self.width;
        let r2 = (zx - self.x).powi(2) + (zy - self.y).powi(2);
        self.strength / (2.0 * std::f64::consts::PI * w2) * (-r2 / (2.0 * w2)).exp()
    }

    fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !self.strength.is_finite() || !(self.strength >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid source {self:?}")));
        }
        Ok(())
    }
}

/// Source sampled at cell centers, gated in time.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTerm {
    pub values: Vec<f64>,
    pub switch_on: f64,
}

impl SourceTerm {
    pub fn gaussian(params: &SourceParams, grid: &FvGridSpec) -> Result<Self> {
        params.validate()?;
        let n = grid.cells()?;
        let mut values = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                values[j * n + i] = params.density(grid.center(i), grid.center(j));
            }
        }
        Ok(Self {
            values,
            switch_on: params.switch_on,
        })
    }

    pub fn none(grid: &FvGridSpec) -> Result<Self> {
        let n = grid.cells()?;
        Ok(Self {
            values: vec![0.0; n * n],
            switch_on: 0.0,
        })
    }

    fn active(&self, t: f64) -> bool {
        t >= self.switch_on
    }
}

/// Cell-centered values on a rectangular window of a solver grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub time: f64,
    /// Domain bounds, used for out-of-domain checks.
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub dz: f64,
    /// Index of the first stored cell along x and y.
    pub i0: usize,
    pub j0: usize,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, x fastest.
    pub values: Vec<f64>,
}

impl Field {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// `Σ G Δz²` over the stored cells.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dz * self.dz
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sub-window in absolute cell indices, clipped to what is stored.
    pub fn window(&self, i0: usize, j0: usize, nx: usize, ny: usize) -> Field {
        let i0 = i0.max(self.i0);
        let j0 = j0.max(self.j0);
        let i1 = (i0 + nx).min(self.i0 + self.nx);
        let j1 = (j0 + ny).min(self.j0 + self.ny);
        let mut values = Vec::with_capacity((i1 - i0) * (j1 - j0));
        for j in j0..j1 {
            let row = (j - self.j0) * self.nx;
            values.extend_from_slice(&self.values[row + i0 - self.i0..row + i1 - self.i0]);
        }
        Field {
            time: self.time,
            domain_lo: self.domain_lo,
            domain_hi: self.domain_hi,
            dz: self.dz,
            i0,
            j0,
            nx: i1 - i0,
            ny: j1 - j0,
            values,
        }
    }

    /// Interpolation weights for a point: `(i, j, tx, ty)` in window indices.
    #[inline]
    pub fn locate(&self, x: f64, y: f64) -> Result<(usize, usize, f64, f64)> {
        let tol = 1e-9 * (1.0 + self.domain_hi.abs());
        if !(x >= self.domain_lo - tol && x <= self.domain_hi + tol && y >= self.domain_lo - tol && y <= self.domain_hi + tol) {
            return Err(Error::OutOfDomain { x, y });
        }
        let axis = |p: f64, first: usize, n: usize| -> (usize, f64) {
            let f = (p - self.domain_lo) / self.dz - 0.5 - first as f64;
            if n < 2 {
                return (0, 0.0);
            }
            let i = (f.floor().max(0.0) as usize).min(n - 2);
            (i, (f - i as f64).clamp(0.0, 1.0))
        };
        let (i, tx) = axis(x, self.i0, self.nx);
        let (j, ty) = axis(y, self.j0, self.ny);
        Ok((i, j, tx, ty))
    }

    /// Bilinear interpolation between cell centers; constant beyond the
    /// outermost stored centers.
    pub fn sample(&self, x: f64, y: f64) -> Result<f64> {
        let (i, j, tx, ty) = self.locate(x, y)?;
        Ok(self.bilinear(i, j, tx, ty))
    }

    #[inline]
    pub fn bilinear(&self, i: usize, j: usize, tx: f64, ty: f64) -> f64 {
        let i1 = (i + 1).min(self.nx - 1);
        let j1 = (j + 1).min(self.ny - 1);
        let v00 = self.at(i, j);
        let v10 = self.at(i1, j);
        let v01 = self.at(i, j1);
        let v11 = self.at(i1, j1);
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }
}

/// Time-stepping state.
#[derive(Debug, Clone)]
pub struct FvSolver {
    grid: FvGridSpec,
    n: usize,
    time: f64,
    g: Vec<f64>,
    source: SourceTerm,
    // scratch
    padded: Vec<f64>,
    k1: Vec<f64>,
    stage: Vec<f64>,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
    face: Vec<f64>,
    neumann: NeumannSolver,
}

impl FvSolver {
    pub fn new(grid: FvGridSpec, source: SourceTerm) -> Result<Self> {
        let n = grid.cells()?;
        if source.values.len() != n * n {
            return Err(Error::ShapeMismatch("source does not match grid".into()));
        }
        let m = n * n;
        Ok(Self {
            grid,
            n,
            time: 0.0,
            g: vec![0.0; m],
            source,
            padded: vec![0.0; (n + 4) * (n + 4)],
            k1: vec![0.0; m],
            stage: vec![0.0; m],
            rhs: vec![0.0; m],
            scratch: vec![0.0; m],
            face: vec![0.0; n + 1],
            neumann: NeumannSolver::new(n),
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.g
    }

    /// Replaces the state (used for initial conditions in tests).
    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.g.len() {
            return Err(Error::ShapeMismatch("state length".into()));
        }
        self.g.copy_from_slice(values);
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.g.iter().sum::<f64>() * self.grid.dz * self.grid.dz
    }

    pub fn field(&self) -> Field {
        Field {
            time: self.time,
            domain_lo: self.grid.lo,
            domain_hi: self.grid.hi,
            dz: self.grid.dz,
            i0: 0,
            j0: 0,
            nx: self.n,
            ny: self.n,
            values: self.g.clone(),
        }
    }

    /// One split step of length `h`.
    pub fn step(&mut self, h: f64) -> Result<()> {
        let t = self.time;
        self.convect(t, 0.5 * h);
        self.diffuse(t, h)?;
        self.convect(t + 0.5 * h, 0.5 * h);
        self.time = t + h;
        Ok(())
    }

    /// Steps until `t_target`, shortening the last step to land on it exactly.
    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        let eps = 1e-12 * (1.0 + t_target.abs());
        while self.time < t_target - eps {
            let h = self.grid.dt.min(t_target - self.time);
            self.step(h)?;
        }
        self.time = self.time.max(t_target);
        Ok(())
    }

    fn fill_padded(&mut self, src: &[f64]) {
        let n = self.n;
        let w = n + 4;
        // Mirror index for ghost cells (zero normal gradient at the walls).
        let mirror = |q: isize| -> usize {
            let n = n as isize;
            let r = if q < 0 {
                -q - 1
            } else if q >= n {
                2 * n - q - 1
            } else {
                q
            };
            r as usize
        };
        for jj in 0..w {
            let j = mirror(jj as isize - 2);
            for ii in 0..w {
                let i = mirror(ii as isize - 2);
                self.padded[jj * w + ii] = src[j * n + i];
            }
        }
    }

    /// `out = −∇·(u G)` with κ = 1/3 upwind-biased faces.
    fn convection_rhs(&mut self, src_is_stage: bool, u: [f64; 2]) {
        let n = self.n;
        let w = n + 4;
        let inv_dz = 1.0 / self.grid.dz;
        if src_is_stage {
            let s = std::mem::take(&mut self.stage);
            self.fill_padded(&s);
            self.stage = s;
        } else {
            let g = std::mem::take(&mut self.g);
            self.fill_padded(&g);
            self.g = g;
        }
        let pd = &self.padded;
        let out = &mut self.k1;
        out.fill(0.0);
        #[inline]
        fn face_value(up_m1: f64, up: f64, dn: f64) -> f64 {
            // upwind cell `up`, its upstream neighbour `up_m1`, downstream `dn`
            (-up_m1 + 5.0 * up + 2.0 * dn) / 6.0
        }
        let [ux, uy] = u;
        if ux != 0.0 {
            for j in 0..n {
                let row = (j + 2) * w;
                for f in 0..=n {
                    // face between padded cells (f+1) and (f+2)
                    let l = row + f + 1;
                    let val = if ux > 0.0 {
                        face_value(pd[l - 1], pd[l], pd[l + 1])
                    } else {
                        face_value(pd[l + 2], pd[l + 1], pd[l])
                    };
                    self.face[f] = ux * val;
                }
                for i in 0..n {
                    out[j * n + i] -= (self.face[i + 1] - self.face[i]) * inv_dz;
                }
            }
        }
        if uy != 0.0 {
            for i in 0..n {
                let col = i + 2;
                for f in 0..=n {
                    let l = (f + 1) * w + col;
                    let val = if uy > 0.0 {
                        face_value(pd[l - w], pd[l], pd[l + w])
                    } else {
                        face_value(pd[l + 2 * w], pd[l + w], pd[l])
                    };
                    self.face[f] = uy * val;
                }
                for j in 0..n {
                    out[j * n + i] -= (self.face[j + 1] - self.face[j]) * inv_dz;
                }
            }
        }
    }

    /// SSP-RK3 over `[t, t + tau]`.
    fn convect(&mut self, t: f64, tau: f64) {
        let u0 = self.grid.velocity.at(t);
        let u1 = self.grid.velocity.at(t + tau);
        let uh = self.grid.velocity.at(t + 0.5 * tau);
        if u0 == [0.0, 0.0] && u1 == [0.0, 0.0] && uh == [0.0, 0.0] {
            return;
        }
        // stage 1
        self.convection_rhs(false, u0);
        for ((s, &g), &k) in self.stage.iter_mut().zip(&self.g).zip(&self.k1) {
            *s = g + tau * k;
        }
        // stage 2
        self.convection_rhs(true, u1);
        for ((s, &g), &k) in self.stage.iter_mut().zip(&self.g).zip(&self.k1) {
            *s = 0.75 * g + 0.25 * (*s + tau * k);
        }
        // stage 3
        self.convection_rhs(true, uh);
        for ((g, &s), &k) in self.g.iter_mut().zip(&self.stage).zip(&self.k1) {
            *g = (*g + 2.0 * (s + tau * k)) / 3.0;
        }
    }

    /// `out = x + c · Δ_h x` where `Δ_h` is the Neumann 5-point Laplacian times Δz².
    fn apply_shifted(n: usize, c: f64, x: &[f64], out: &mut [f64]) {
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                let xc = x[k];
                let mut lap = 0.0;
                if i > 0 {
                    lap += x[k - 1] - xc;
                }
                if i + 1 < n {
                    lap += x[k + 1] - xc;
                }
                if j > 0 {
                    lap += x[k - n] - xc;
                }
                if j + 1 < n {
                    lap += x[k + n] - xc;
                }
                out[k] = xc + c * lap;
            }
        }
    }

    /// Crank–Nicolson over `[t, t + h]` with the source at the midpoint.
    fn diffuse(&mut self, t: f64, h: f64) -> Result<()> {
        let n = self.n;
        let c = 0.5 * h / (self.grid.dz * self.grid.dz);
        Self::apply_shifted(n, c, &self.g, &mut self.rhs);
        if self.source.active(t + 0.5 * h) {
            for (r, s) in self.rhs.iter_mut().zip(&self.source.values) {
                *r += h * s;
            }
        }
        self.g.copy_from_slice(&self.rhs);
        self.neumann.solve_shifted(c, &mut self.g, &mut self.scratch);
        if !self.g.iter().all(|g| g.is_finite()) {
            return Err(Error::ModelFailure("non-finite concentration".into()));
        }
        Ok(())
    }
}

/// Direct solver for `(I − c Δ_h) x = b` with the Neumann 5-point Laplacian,
/// diagonalized by the type-II discrete cosine transform.
#[derive(Clone)]
struct NeumannSolver {
    n: usize,
    dct: Arc<dyn TransformType2And3<f64>>,
    /// Eigenvalues of the 1-D Neumann second difference.
    lambda: Vec<f64>,
    work: RefCell<Vec<f64>>,
}

impl std::fmt::Debug for NeumannSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NeumannSolver").field("n", &self.n).finish()
    }
}

impl NeumannSolver {
    fn new(n: usize) -> Self {
        let dct = DctPlanner::new().plan_dct2(n);
        let lambda = (0..n)
            .map(|k| -4.0 * (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin().powi(2))
            .collect();
        let work = RefCell::new(vec![0.0; dct.get_scratch_len()]);
        Self {
            n,
            dct,
            lambda,
            work,
        }
    }

    fn rows(&self, x: &mut [f64], forward: bool, work: &mut [f64]) {
        for row in x.chunks_exact_mut(self.n) {
            if forward {
                self.dct.process_dct2_with_scratch(row, work);
            } else {
                self.dct.process_dct3_with_scratch(row, work);
            }
        }
    }

    fn transpose(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            for i in 0..n {
                out[i * n + j] = x[j * n + i];
            }
        }
    }

    /// Overwrites `x` (holding `b`) with the solution.
    fn solve_shifted(&self, c: f64, x: &mut [f64], scratch: &mut [f64]) {
        let n = self.n;
        let mut work = self.work.borrow_mut();
        let work = &mut work[..];
        self.rows(x, true, work);
        self.transpose(x, scratch);
        self.rows(scratch, true, work);
        // scratch[i * n + j]: mode j along y, mode i along x
        let norm = (2.0 / n as f64).powi(2);
        for i in 0..n {
            for j in 0..n {
                scratch[i * n + j] *= norm / (1.0 - c * (self.lambda[i] + self.lambda[j]));
            }
        }
        self.rows(scratch, false, work);
        self.transpose(scratch, x);
        self.rows(x, false, work);
    }
}

/// Solves from rest and returns the field at each requested time.
pub fn fv_solve(theta: &SourceParams, times: &[f64], grid: &FvGridSpec) -> Result<Vec<Field>> {
    let source = SourceTerm::gaussian(theta, grid)?;
    solve_with_source(source, times, grid)
}

pub fn solve_with_source(source: SourceTerm, times: &[f64], grid: &FvGridSpec) -> Result<Vec<Field>> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidArgument("times must be positive and sorted".into()));
    }
    let t_end = times.last().copied().unwrap_or(0.0);
    grid.check_stability(t_end)?;
    let mut solver = FvSolver::new(*grid, source)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        solver.advance_to(t)?;
        out.push(solver.field());
    }
    Ok(out)
}
