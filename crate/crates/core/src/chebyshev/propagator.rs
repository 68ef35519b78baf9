//! Chebyshev expansion of `exp(-i H dt)`.
//!
//! With `H~ = (H - b) / a` mapping the spectrum into `[-1, 1]`,
//!
//! ```text
//! exp(-i H dt) = exp(-i b dt) [c_0 + 2 sum_{n>=1} c_n T_n(H~)],   c_n = (-i)^n J_n(a dt)
//! ```
//!
//! and `T_n(H~) psi` follows from the three-term recurrence.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bessel::bessel_j_sequence;
use crate::error::{Error, Result};
use crate::lanczos::{estimate_spectral_bounds, SpectralBounds, DEFAULT_MARGIN};
use crate::operator::{norm, SparseOperator, C64};

pub const DEFAULT_COEFF_TOL: f64 = 1e-14;
pub const ORDER_GUARD: usize = 5;
pub const DEFAULT_ORDER_CAP: usize = 4000;

#[derive(Debug, Clone, Copy)]
pub struct PlanOptions {
    pub tol: f64,
    pub guard: usize,
    pub order_cap: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_COEFF_TOL,
            guard: ORDER_GUARD,
            order_cap: DEFAULT_ORDER_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagatorPlan {
    /// Half-span of the spectral interval.
    pub a: f64,
    /// Center of the spectral interval.
    pub b: f64,
    pub dt: f64,
    /// Highest polynomial order kept.
    pub order: usize,
    pub coeffs: Vec<Complex64>,
    pub phase: Complex64,
}

/// Plans a step of length `dt` for `op`, estimating spectral bounds first.
pub fn plan_propagator(op: &SparseOperator, dt: f64, tol: f64) -> Result<PropagatorPlan> {
    let bounds = estimate_spectral_bounds(op, DEFAULT_MARGIN)?;
    plan_with_bounds(
        &bounds,
        dt,
        PlanOptions {
            tol,
            ..PlanOptions::default()
        },
    )
}

pub fn plan_with_bounds(bounds: &SpectralBounds, dt: f64, opts: PlanOptions) -> Result<PropagatorPlan> {
    if !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("time step {dt} is not finite")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("coefficient tolerance must be > 0".into()));
    }
    let a = bounds.half_span();
    let b = bounds.center();
    let x = a * dt;
    let onset = x.abs().ceil() as usize;
    if onset + opts.guard > opts.order_cap {
        return Err(Error::OrderTooLarge {
            required: onset + opts.guard,
            cap: opts.order_cap,
        });
    }
    let mut top = onset + 40;
    let order = loop {
        let j = bessel_j_sequence(top, x);
        if let Some(m) = (onset..=top).find(|&m| j[m].abs() < opts.tol) {
            break m + opts.guard;
        }
        if top >= opts.order_cap {
            return Err(Error::OrderTooLarge {
                required: top + opts.guard,
                cap: opts.order_cap,
            });
        }
        top = (2 * top).min(opts.order_cap);
    };
    if order > opts.order_cap {
        return Err(Error::OrderTooLarge {
            required: order,
            cap: opts.order_cap,
        });
    }
    let j = bessel_j_sequence(order, x);
    let minus_i = C64::new(0.0, -1.0);
    let mut pow = C64::new(1.0, 0.0);
    let coeffs = j
        .iter()
        .map(|&jn| {
            let c = pow * jn;
            pow *= minus_i;
            c
        })
        .collect();
    Ok(PropagatorPlan {
        a,
        b,
        dt,
        order,
        coeffs,
        phase: C64::from_polar(1.0, -b * dt),
    })
}

impl PropagatorPlan {
    /// Stable 64-bit digest of the plan, stored in checkpoints.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for v in [self.a, self.b, self.dt] {
            h.update(v.to_le_bytes());
        }
        h.update((self.order as u64).to_le_bytes());
        for c in &self.coeffs {
            h.update(c.re.to_le_bytes());
            h.update(c.im.to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    /// Scalar value of the truncated expansion at rescaled energy `x`,
    /// i.e. the approximation to `exp(-i (a x + b) dt)`.
    pub fn scalar(&self, x: f64) -> C64 {
        let (mut t_prev, mut t_cur) = (1.0, x);
        let mut acc = self.coeffs[0];
        for (n, c) in self.coeffs.iter().enumerate().skip(1) {
            if n > 1 {
                let t_next = 2.0 * x * t_cur - t_prev;
                t_prev = t_cur;
                t_cur = t_next;
            }
            acc += *c * (2.0 * t_cur);
        }
        self.phase * acc
    }

    /// Checks that `|c_n|` decreases beyond the Bessel turning point.
    pub fn coefficients_decay(&self) -> bool {
        let start = (self.a * self.dt).abs().ceil() as usize + ORDER_GUARD;
        self.coeffs
            .iter()
            .skip(start)
            .map(|c| c.norm())
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[1] <= w[0])
    }
}

/// Reusable scratch space for repeated steps on one operator.
#[derive(Debug, Default)]
pub struct Stepper {
    t_prev: Vec<C64>,
    t_cur: Vec<C64>,
    acc: Vec<C64>,
    steps: usize,
}

impl Stepper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Advances `state` in place by one plan step.
    pub fn step(&mut self, plan: &PropagatorPlan, op: &SparseOperator, state: &mut [C64]) -> Result<()> {
        op.check_dim(state.len())?;
        let dim = state.len();
        for buf in [&mut self.t_prev, &mut self.t_cur, &mut self.acc] {
            buf.resize(dim, C64::new(0.0, 0.0));
        }
        let inv_a = 1.0 / plan.a;
        let shift = -plan.b * inv_a;
        let c = &plan.coeffs;

        // T_0 = psi, T_1 = H~ psi.
        self.t_prev.copy_from_slice(state);
        op.apply_affine_into(state, &mut self.t_cur, inv_a, shift, 0.0);
        let two_c1 = if c.len() > 1 { c[1] * 2.0 } else { C64::new(0.0, 0.0) };
        for ((acc, &s), &t1) in self.acc.iter_mut().zip(state.iter()).zip(&self.t_cur) {
            *acc = s * c[0] + t1 * two_c1;
        }
        for cn in c.iter().skip(2) {
            // T_{n} = 2 H~ T_{n-1} - T_{n-2}, written over T_{n-2}.
            op.apply_affine_into(&self.t_cur, &mut self.t_prev, 2.0 * inv_a, 2.0 * shift, -1.0);
            std::mem::swap(&mut self.t_prev, &mut self.t_cur);
            let two_cn = *cn * 2.0;
            for (acc, &t) in self.acc.iter_mut().zip(&self.t_cur) {
                *acc += t * two_cn;
            }
        }
        self.steps += 1;
        for (s, &acc) in state.iter_mut().zip(&self.acc) {
            *s = acc * plan.phase;
            if !(s.re.is_finite() && s.im.is_finite()) {
                return Err(Error::NonFinite { step: self.steps });
            }
        }
        Ok(())
    }
}

/// One propagation step; returns the new state and leaves the input alone.
pub fn step(plan: &PropagatorPlan, op: &SparseOperator, state: &[C64]) -> Result<Vec<C64>> {
    let n0 = norm(state);
    if (n0 - 1.0).abs() > 1e-6 {
        log::warn!("propagating a state with norm {n0}");
    }
    let mut out = state.to_vec();
    Stepper::new().step(plan, op, &mut out)?;
    Ok(out)
}
