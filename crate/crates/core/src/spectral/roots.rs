//! Zeros of `det(I - K̂(z))` by the argument principle.
//!
//! The search window is carved into vertical strips that avoid the real
//! poles of the tail closure, then each strip is subdivided recursively:
//! rectangles with winding number zero are pruned, isolating rectangles are
//! polished by Newton iteration on the determinant. Multiplicities come from
//! the winding count of the isolating rectangle.

use super::laplace::{fredholm_det, LaplaceKernel};
use super::SpectralError;
use crate::exec;
use num_complex::Complex64;

#[derive(Debug, Clone, Copy)]
pub struct SearchWindow {
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: f64,
}

impl SearchWindow {
    pub fn new(re_min: f64, re_max: f64, im_max: f64) -> SearchWindow {
        SearchWindow {
            re_min,
            re_max,
            im_max,
        }
    }

    /// Default window: `Re ∈ [-0.9 κ_tail, 2(1 + ∫‖K‖)]`, `|Im| ≤ 20`.
    /// The right edge uses the Neumann bound (no zeros once `‖K̂‖ < 1`).
    pub fn default_for(lk: &LaplaceKernel, weak_integral: f64) -> SearchWindow {
        let kappa = lk.kappa_tail();
        let re_min = if kappa.is_finite() { -0.9 * kappa } else { -1.0 };
        let re_max = 2.0 * (1.0 + weak_integral.max(0.0).min(1e3));
        SearchWindow {
            re_min,
            re_max,
            im_max: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FindRootsOptions {
    /// Target accuracy of polished roots; also the merge radius scale.
    pub refine_tol: f64,
    /// Contour samples per rectangle side (doubled on phase trouble).
    pub contour_points: usize,
    /// Roots with `|Im z| ≤ omega_tol` are classified as static.
    pub omega_tol: f64,
    /// Contour determinant magnitudes below this mean "root on contour".
    pub det_floor: f64,
    /// Rectangles are subdivided down to this size before polishing.
    pub isolate_size: f64,
}

impl Default for FindRootsOptions {
    fn default() -> Self {
        FindRootsOptions {
            refine_tol: 1e-6,
            contour_points: 256,
            omega_tol: 1e-3,
            det_floor: 1e-12,
            isolate_size: 2e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootClass {
    /// Real root (static bifurcation direction).
    Static,
    /// Complex-pair root (oscillatory / Hopf direction).
    Hopf,
}

#[derive(Debug, Clone)]
pub struct LocatedRoot {
    pub z: Complex64,
    pub multiplicity: usize,
    pub class: RootClass,
    /// `|det(I - K̂(ẑ))|` after polishing.
    pub residual: f64,
}

#[derive(Debug, Clone, Default)]
pub struct WindingStats {
    pub rectangles: usize,
    pub subdivisions: usize,
    /// True when every parent winding equalled the sum over its children.
    pub consistent: bool,
}

#[derive(Debug, Clone)]
pub struct RootReport {
    pub roots: Vec<LocatedRoot>,
    /// `-max Re(root)`; `None` when no root lies in the searched window.
    pub lambda_prime: Option<f64>,
    pub window_requested: SearchWindow,
    pub window_searched: SearchWindow,
    /// Real strips excluded around tail poles.
    pub excluded_strips: Vec<(f64, f64)>,
    pub stats: WindingStats,
    pub notes: Vec<String>,
}

impl RootReport {
    /// True when every located root has negative real part.
    pub fn stable_in_window(&self) -> bool {
        self.roots.iter().all(|r| r.z.re < 0.0)
    }

    pub fn rightmost(&self) -> Option<&LocatedRoot> {
        self.roots
            .iter()
            .max_by(|a, b| a.z.re.partial_cmp(&b.z.re).unwrap())
    }

    /// One-line verdict.
    pub fn verdict(&self) -> String {
        match self.rightmost() {
            None => format!(
                "stable, no root in window (Re ∈ [{:.3}, {:.3}], |Im| ≤ {:.3})",
                self.window_searched.re_min,
                self.window_searched.re_max,
                self.window_searched.im_max
            ),
            Some(r) if r.z.re < 0.0 => {
                format!("stable, λ' = {:.6}", -r.z.re)
            }
            Some(r) => format!(
                "unstable, rightmost root = {:.6} {} {:.6}i",
                r.z.re,
                if r.z.im < 0.0 { "-" } else { "+" },
                r.z.im.abs()
            ),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    re_lo: f64,
    re_hi: f64,
    im_lo: f64,
    im_hi: f64,
}

impl Rect {
    fn width(&self) -> f64 {
        self.re_hi - self.re_lo
    }
    fn height(&self) -> f64 {
        self.im_hi - self.im_lo
    }
    fn center(&self) -> Complex64 {
        Complex64::new(
            0.5 * (self.re_lo + self.re_hi),
            0.5 * (self.im_lo + self.im_hi),
        )
    }
    fn diag(&self) -> f64 {
        (self.width().powi(2) + self.height().powi(2)).sqrt()
    }
}

enum WindErr {
    NearRoot(Complex64),
    Unresolved,
    Eval(SpectralError),
}

/// Winding number of `det(I - K̂(·))` along the rectangle boundary,
/// sampled with `n` points per side.
fn winding(lk: &LaplaceKernel, rect: &Rect, n: usize, floor: f64) -> Result<i64, WindErr> {
    let mut pts: Vec<Complex64> = Vec::with_capacity(4 * n);
    let corners = [
        Complex64::new(rect.re_lo, rect.im_lo),
        Complex64::new(rect.re_hi, rect.im_lo),
        Complex64::new(rect.re_hi, rect.im_hi),
        Complex64::new(rect.re_lo, rect.im_hi),
    ];
    for s in 0..4 {
        let a = corners[s];
        let b = corners[(s + 1) % 4];
        for k in 0..n {
            let t = k as f64 / n as f64;
            pts.push(a + (b - a) * t);
        }
    }
    let dets: Vec<Result<Complex64, SpectralError>> =
        exec::ordered_map(&pts, |&z| fredholm_det(lk, z));
    let mut vals = Vec::with_capacity(pts.len());
    for (z, d) in pts.iter().zip(dets) {
        match d {
            Ok(v) => {
                if v.norm() < floor {
                    return Err(WindErr::NearRoot(*z));
                }
                vals.push(v);
            }
            Err(e) => return Err(WindErr::Eval(e)),
        }
    }
    let mut total = 0.0;
    for k in 0..vals.len() {
        let a = vals[k];
        let b = vals[(k + 1) % vals.len()];
        let delta = (b / a).arg();
        if delta.abs() > 1.8 {
            return Err(WindErr::Unresolved);
        }
        total += delta;
    }
    let w = total / std::f64::consts::TAU;
    let rounded = w.round();
    if (w - rounded).abs() > 0.25 {
        return Err(WindErr::Unresolved);
    }
    Ok(rounded as i64)
}

/// Winding with automatic contour refinement (doubling up to 8×).
fn winding_refined(
    lk: &LaplaceKernel,
    rect: &Rect,
    base_n: usize,
    floor: f64,
) -> Result<i64, WindErr> {
    let mut n = base_n;
    loop {
        match winding(lk, rect, n, floor) {
            Err(WindErr::Unresolved) if n < base_n * 8 => n *= 2,
            other => return other,
        }
    }
}

fn newton_polish(
    lk: &LaplaceKernel,
    start: Complex64,
    leash: f64,
    tol: f64,
) -> (Complex64, f64) {
    let mut z = start;
    let mut best = start;
    let mut best_res = f64::INFINITY;
    for _ in 0..80 {
        let f = match fredholm_det(lk, z) {
            Ok(v) => v,
            Err(_) => break,
        };
        if f.norm() < best_res {
            best_res = f.norm();
            best = z;
        }
        let h = 1e-7 * (1.0 + z.norm());
        let (fp, fm) = match (
            fredholm_det(lk, z + Complex64::new(h, 0.0)),
            fredholm_det(lk, z - Complex64::new(h, 0.0)),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            _ => break,
        };
        let deriv = (fp - fm) / (2.0 * h);
        if deriv.norm() < 1e-300 {
            break;
        }
        let dz = f / deriv;
        z -= dz;
        if (z - start).norm() > leash {
            z = best;
            break;
        }
        if dz.norm() < tol * 1e-4 {
            break;
        }
    }
    if let Ok(f) = fredholm_det(lk, z) {
        if f.norm() < best_res {
            return (z, f.norm());
        }
    }
    (best, best_res)
}

struct Search<'a> {
    lk: &'a LaplaceKernel,
    opts: FindRootsOptions,
    stats: WindingStats,
    raw: Vec<(Complex64, usize, f64)>,
}

impl Search<'_> {
    fn solve(&mut self, rect: Rect, w: i64, depth: usize) -> Result<(), SpectralError> {
        self.stats.rectangles += 1;
        if w == 0 {
            return Ok(());
        }
        if w < 0 {
            return Err(SpectralError::WindingInconsistent {
                context: format!("negative winding {w} in a pole-free rectangle"),
            });
        }
        let small = rect.width() <= self.opts.isolate_size
            && rect.height() <= self.opts.isolate_size;
        if small || depth > 64 {
            let (z, residual) =
                newton_polish(self.lk, rect.center(), rect.diag() * 8.0, self.opts.refine_tol);
            self.raw.push((z, w as usize, residual));
            return Ok(());
        }
        if w == 1 {
            // A simple zero: Newton from the center usually lands on it
            // directly; accepting it (only when it stays inside the box and
            // the residual is tiny) skips the full subdivision.
            let (z, residual) =
                newton_polish(self.lk, rect.center(), rect.diag() * 2.0, self.opts.refine_tol);
            let inside = z.re >= rect.re_lo && z.re <= rect.re_hi
                && z.im >= rect.im_lo && z.im <= rect.im_hi;
            if inside && residual <= 1e-8 {
                self.raw.push((z, 1, residual));
                return Ok(());
            }
        }

        // Split with jittered lines so contours dodge roots; retried a few
        // times before giving up.
        let jitters = [0.5, 0.553, 0.447, 0.521, 0.479, 0.537];
        let mut last_near: Option<Complex64> = None;
        for &frac in &jitters {
            let children = split(&rect, frac, self.opts.isolate_size);
            let mut windings = Vec::with_capacity(children.len());
            let mut tainted = false;
            for child in &children {
                match winding_refined(self.lk, child, self.opts.contour_points, self.opts.det_floor)
                {
                    Ok(cw) => windings.push(cw),
                    Err(WindErr::NearRoot(z)) => {
                        last_near = Some(z);
                        tainted = true;
                        break;
                    }
                    Err(WindErr::Unresolved) => {
                        tainted = true;
                        break;
                    }
                    Err(WindErr::Eval(e)) => return Err(e),
                }
            }
            if tainted {
                continue;
            }
            let sum: i64 = windings.iter().sum();
            self.stats.subdivisions += 1;
            if sum != w {
                // Quadrature too coarse on the parent: re-check it with a
                // denser contour before declaring inconsistency.
                match winding_refined(
                    self.lk,
                    &rect,
                    self.opts.contour_points * 2,
                    self.opts.det_floor,
                ) {
                    Ok(wr) if wr == sum => {}
                    _ => {
                        self.stats.consistent = false;
                        return Err(SpectralError::WindingInconsistent {
                            context: format!(
                                "parent winding {w} vs children sum {sum} near {}",
                                rect.center()
                            ),
                        });
                    }
                }
            }
            for (child, cw) in children.into_iter().zip(windings) {
                self.solve(child, cw, depth + 1)?;
            }
            return Ok(());
        }
        match last_near {
            Some(z) => Err(SpectralError::ContourNearRoot {
                z,
                tol: self.opts.det_floor,
            }),
            None => Err(SpectralError::WindingInconsistent {
                context: format!("phase unwrapping failed near {}", rect.center()),
            }),
        }
    }
}

fn split(rect: &Rect, frac: f64, min_size: f64) -> Vec<Rect> {
    let split_re = rect.width() > min_size;
    let split_im = rect.height() > min_size;
    let rm = rect.re_lo + frac * rect.width();
    let im = rect.im_lo + frac * rect.height();
    match (split_re, split_im) {
        (true, true) => vec![
            Rect { re_lo: rect.re_lo, re_hi: rm, im_lo: rect.im_lo, im_hi: im },
            Rect { re_lo: rm, re_hi: rect.re_hi, im_lo: rect.im_lo, im_hi: im },
            Rect { re_lo: rect.re_lo, re_hi: rm, im_lo: im, im_hi: rect.im_hi },
            Rect { re_lo: rm, re_hi: rect.re_hi, im_lo: im, im_hi: rect.im_hi },
        ],
        (true, false) => vec![
            Rect { re_lo: rect.re_lo, re_hi: rm, ..*rect },
            Rect { re_lo: rm, re_hi: rect.re_hi, ..*rect },
        ],
        (false, true) => vec![
            Rect { im_lo: rect.im_lo, im_hi: im, ..*rect },
            Rect { im_lo: im, im_hi: rect.im_hi, ..*rect },
        ],
        (false, false) => vec![*rect],
    }
}

/// Locate all zeros of `det(I - K̂(z))` inside the window.
pub fn find_roots(
    lk: &LaplaceKernel,
    window: &SearchWindow,
    opts: &FindRootsOptions,
) -> Result<RootReport, SpectralError> {
    if window.re_min >= window.re_max || window.im_max <= 0.0 {
        return Err(SpectralError::Invalid("degenerate search window".into()));
    }
    let mut notes = Vec::new();
    let mut searched = *window;

    // The amplification cap bounds how far left the continuation stays
    // trustworthy; clamp and say so.
    let limit = lk.re_min_limit();
    if searched.re_min < limit {
        searched.re_min = limit + 1e-6;
        notes.push(format!(
            "window left edge clamped to {:.4} by the amplification cap",
            searched.re_min
        ));
    }
    if searched.re_min >= searched.re_max {
        return Err(SpectralError::Invalid(
            "window collapsed after amplification clamping".into(),
        ));
    }

    // Carve out strips around the tail poles.
    let strip_half = 2.5 * lk.pole_margin().max(opts.refine_tol * 10.0);
    let poles = lk.poles_in(searched.re_min - strip_half, searched.re_max + strip_half);
    let mut strips = Vec::new();
    let mut edges = vec![searched.re_min];
    for &pole in &poles {
        let lo = (pole - strip_half).max(searched.re_min);
        let hi = (pole + strip_half).min(searched.re_max);
        if hi > lo {
            strips.push((lo, hi));
            edges.push(lo);
            edges.push(hi);
        }
    }
    edges.push(searched.re_max);
    if !strips.is_empty() {
        notes.push(format!(
            "excluded {} strip(s) of half-width {strip_half:.3} around tail poles",
            strips.len()
        ));
    }

    let noise = lk.noise_bound(Complex64::new(searched.re_min, 0.0));
    if noise > 0.05 {
        notes.push(format!(
            "Monte Carlo noise bound {noise:.2e} at the window's left edge; \
             roots there carry that uncertainty"
        ));
    }

    let mut search = Search {
        lk,
        opts: *opts,
        stats: WindingStats {
            consistent: true,
            ..Default::default()
        },
        raw: Vec::new(),
    };

    for pair in edges.chunks(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if hi - lo < 1e-9 {
            continue;
        }
        let rect = Rect {
            re_lo: lo,
            re_hi: hi,
            im_lo: -window.im_max,
            im_hi: window.im_max,
        };
        let w = match winding_refined(lk, &rect, opts.contour_points, opts.det_floor) {
            Ok(w) => w,
            Err(WindErr::NearRoot(z)) => {
                return Err(SpectralError::ContourNearRoot {
                    z,
                    tol: opts.det_floor,
                })
            }
            Err(WindErr::Unresolved) => {
                return Err(SpectralError::WindingInconsistent {
                    context: format!("outer contour of strip [{lo}, {hi}]"),
                })
            }
            Err(WindErr::Eval(e)) => return Err(e),
        };
        search.solve(rect, w, 0)?;
    }

    // Merge raw roots (a multiplicity-m zero may surface from several boxes).
    let merge_radius = (opts.isolate_size * 2.0).max(opts.refine_tol * 10.0);
    let mut raw = search.raw;
    raw.sort_by(|a, b| (a.0.re, a.0.im).partial_cmp(&(b.0.re, b.0.im)).unwrap());
    let mut merged: Vec<(Complex64, usize, f64)> = Vec::new();
    for (z, mult, residual) in raw {
        if let Some(last) = merged.last_mut() {
            if (last.0 - z).norm() < merge_radius {
                last.1 += mult;
                last.2 = last.2.min(residual);
                continue;
            }
        }
        merged.push((z, mult, residual));
    }

    let roots: Vec<LocatedRoot> = merged
        .into_iter()
        .map(|(z, multiplicity, residual)| LocatedRoot {
            z,
            multiplicity,
            class: if z.im.abs() <= opts.omega_tol {
                RootClass::Static
            } else {
                RootClass::Hopf
            },
            residual,
        })
        .collect();

    let lambda_prime = roots
        .iter()
        .map(|r| -r.z.re)
        .min_by(|a, b| a.partial_cmp(b).unwrap());

    Ok(RootReport {
        roots,
        lambda_prime,
        window_requested: *window,
        window_searched: searched,
        excluded_strips: strips,
        stats: search.stats,
        notes,
    })
}
