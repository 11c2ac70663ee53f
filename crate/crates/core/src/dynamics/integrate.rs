use nalgebra::{DMatrix, DVector, Dyn, Cholesky};

use super::{devectorize, vectorize, Accelerations, ConstraintSet, DynamicsError, Model, StructureState, Wrench};

/// Renormalization passes applied after each step.
const RENORM_PASSES: usize = 3;

fn rk4<F>(state: &StructureState, dt: f64, mut accel: F) -> Result<StructureState, DynamicsError>
where
    F: FnMut(&StructureState) -> Result<Accelerations, DynamicsError>,
{
    let shifted = |k: &(DMatrix<f64>, DMatrix<f64>, DVector<f64>), h: f64| StructureState {
        n: &state.n + &k.0 * h,
        n_dot: &state.n_dot + &k.1 * h,
        omega_w: &state.omega_w + &k.2 * h,
        t: state.t + h,
    };
    let mut eval = |s: &StructureState| -> Result<_, DynamicsError> {
        let a = accel(s)?;
        Ok((s.n_dot.clone(), a.n_ddot, a.omega_w_dot))
    };
    let k1 = eval(state)?;
    let k2 = eval(&shifted(&k1, dt / 2.0))?;
    let k3 = eval(&shifted(&k2, dt / 2.0))?;
    let k4 = eval(&shifted(&k3, dt))?;
    let w = dt / 6.0;
    let next = StructureState {
        n: &state.n + (&k1.0 + &k2.0 * 2.0 + &k3.0 * 2.0 + &k4.0) * w,
        n_dot: &state.n_dot + (&k1.1 + &k2.1 * 2.0 + &k3.1 * 2.0 + &k4.1) * w,
        omega_w: &state.omega_w + (&k1.2 + &k2.2 * 2.0 + &k3.2 * 2.0 + &k4.2) * w,
        t: state.t + dt,
    };
    if !next.is_finite() {
        return Err(DynamicsError::NonFinite { t: next.t });
    }
    Ok(next)
}

impl Model {
    /// One RK4 step with `γ` and the wrench held over the step, followed by
    /// bar-length and constraint renormalization.
    pub fn step(&self, state: &StructureState, gamma: &DVector<f64>, wrench: &Wrench, dt: f64) -> Result<StructureState, DynamicsError> {
        let mut next = self.step_unprojected(state, gamma, wrench, dt)?;
        self.renormalize(&mut next);
        Ok(next)
    }

    /// One RK4 step without renormalization.
    pub fn step_unprojected(&self, state: &StructureState, gamma: &DVector<f64>, wrench: &Wrench, dt: f64) -> Result<StructureState, DynamicsError> {
        if !(dt > 0.0) {
            return Err(DynamicsError::Dimension(format!("time step {dt} must be positive")));
        }
        rk4(state, dt, |s| self.accelerations(s, wrench, gamma))
    }

    /// Projects bars back to their lengths about their midpoints, removes
    /// the relative radial bar velocity and projects onto the constraints.
    pub fn renormalize(&self, state: &mut StructureState) {
        let v1 = &self.constraints.v1;
        let v2 = &self.constraints.v2;
        for _ in 0..RENORM_PASSES {
            for (i, [a, b]) in self.bars().iter().enumerate() {
                let (a, b) = (*a, *b);
                let c = (state.n.column(a) + state.n.column(b)) * 0.5;
                let u = (state.n.column(b) - state.n.column(a)).normalize();
                let half = u.clone() * (self.material.bar_length[i] / 2.0);
                state.n.set_column(a, &(&c - &half));
                state.n.set_column(b, &(&c + &half));
                let rel = state.n_dot.column(b) - state.n_dot.column(a);
                let rad = &u * u.dot(&rel) * 0.5;
                let mut va = state.n_dot.column_mut(a);
                va += &rad;
                let mut vb = state.n_dot.column_mut(b);
                vb -= &rad;
            }
            if self.constraints.rank() > 0 {
                let nn = self.n_nodes();
                let n = vectorize(&state.n);
                let n = &n - v1 * (v1.transpose() * &n - &self.constraints.eta1);
                state.n = devectorize(&n, nn);
                let nd = v2 * (v2.transpose() * vectorize(&state.n_dot));
                state.n_dot = devectorize(&nd, nn);
            }
        }
    }
}

/// Integrates the full-order equations with multipliers from the joint
/// `(λ, ω)` system.
pub struct LagrangeIntegrator<'a> {
    pub model: &'a Model,
}

impl LagrangeIntegrator<'_> {
    pub fn step(&self, state: &StructureState, gamma: &DVector<f64>, wrench: &Wrench, dt: f64) -> Result<StructureState, DynamicsError> {
        rk4(state, dt, |s| self.model.accelerations_lagrange(s, wrench, gamma))
    }
}

/// Reduced second-order system `M₂ η̈₂ + K₂ η₂ = V₂ᵀ f − V₂ᵀ 𝒦 V₁ η₁`.
#[derive(Clone, Debug)]
pub struct ReducedSystem {
    pub m2: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    /// `V₂ᵀ`, maps stacked nodal forces into reduced forces.
    pub forcing: DMatrix<f64>,
    /// `−V₂ᵀ 𝒦 V₁ η₁`.
    pub offset: DVector<f64>,
}

impl ReducedSystem {
    /// Projects the stacked mass `big_m` and stiffness `big_k` onto the free
    /// coordinates of `constraints`.
    pub fn new(constraints: &ConstraintSet, big_m: &DMatrix<f64>, big_k: &DMatrix<f64>) -> Self {
        let v2 = &constraints.v2;
        Self {
            m2: v2.transpose() * big_m * v2,
            k2: v2.transpose() * big_k * v2,
            forcing: v2.transpose(),
            offset: -(v2.transpose() * big_k * (&constraints.v1 * &constraints.eta1)),
        }
    }
}

/// Integrates the reduced coordinates `η₂` directly.
pub struct ReducedIntegrator<'a> {
    pub model: &'a Model,
    m2: Cholesky<f64, Dyn>,
}

impl<'a> ReducedIntegrator<'a> {
    pub fn new(model: &'a Model) -> Result<Self, DynamicsError> {
        let v2 = &model.constraints.v2;
        let m2 = v2.transpose() * super::kron_eye3(&model.ms) * v2;
        let m2 = m2
            .cholesky()
            .ok_or_else(|| DynamicsError::ConstraintDegeneracy("reduced mass matrix is not positive definite".into()))?;
        Ok(Self { model, m2 })
    }

    /// `(η₂, η̇₂)` of a constraint-consistent state.
    pub fn project(&self, state: &StructureState) -> (DVector<f64>, DVector<f64>) {
        let v2t = self.model.constraints.v2.transpose();
        (&v2t * vectorize(&state.n), &v2t * vectorize(&state.n_dot))
    }

    /// Reconstructs `n = V₁ η₁ + V₂ η₂`, `ṅ = V₂ η̇₂`.
    pub fn lift(&self, eta: &DVector<f64>, eta_dot: &DVector<f64>, omega_w: &DVector<f64>, t: f64) -> StructureState {
        let c = &self.model.constraints;
        let nn = self.model.n_nodes();
        StructureState {
            n: devectorize(&(&c.v1 * &c.eta1 + &c.v2 * eta), nn),
            n_dot: devectorize(&(&c.v2 * eta_dot), nn),
            t,
            omega_w: omega_w.clone(),
        }
    }

    fn eta_ddot(&self, state: &StructureState, gamma: &DVector<f64>, wrench: &Wrench) -> Result<DVector<f64>, DynamicsError> {
        let m = self.model;
        let f = m.applied_forces(state, wrench) + m.string_forces(&state.n, gamma);
        let lambda = m.compute_lambda(state, wrench, gamma, None)?;
        let total = vectorize(&(f + m.bar_forces(&state.n, &lambda)));
        Ok(self.m2.solve(&(m.constraints.v2.transpose() * total)))
    }

    /// One RK4 step of `(η₂, η̇₂, ω_w)`.
    pub fn step(&self, state: &StructureState, gamma: &DVector<f64>, wrench: &Wrench, dt: f64) -> Result<StructureState, DynamicsError> {
        let (e0, ed0) = self.project(state);
        let wd = wrench.omega_w_dot(&self.model.material);
        let w0 = &state.omega_w;
        let deriv = |e: &DVector<f64>, ed: &DVector<f64>, w: &DVector<f64>, t: f64| -> Result<DVector<f64>, DynamicsError> {
            self.eta_ddot(&self.lift(e, ed, w, t), gamma, wrench)
        };
        let t = state.t;
        let h = dt / 2.0;
        let a1 = deriv(&e0, &ed0, w0, t)?;
        let (e2, ed2, w2) = (&e0 + &ed0 * h, &ed0 + &a1 * h, w0 + &wd * h);
        let a2 = deriv(&e2, &ed2, &w2, t + h)?;
        let (e3, ed3) = (&e0 + &ed2 * h, &ed0 + &a2 * h);
        let a3 = deriv(&e3, &ed3, &w2, t + h)?;
        let (e4, ed4, w4) = (&e0 + &ed3 * dt, &ed0 + &a3 * dt, w0 + &wd * dt);
        let a4 = deriv(&e4, &ed4, &w4, t + dt)?;
        let k = dt / 6.0;
        let e = &e0 + (&ed0 + &ed2 * 2.0 + &ed3 * 2.0 + &ed4) * k;
        let ed = &ed0 + (&a1 + &a2 * 2.0 + &a3 * 2.0 + &a4) * k;
        let next = self.lift(&e, &ed, &w4, t + dt);
        if !next.is_finite() {
            return Err(DynamicsError::NonFinite { t: next.t });
        }
        Ok(next)
    }
}
