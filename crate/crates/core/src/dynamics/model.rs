use nalgebra::{DMatrix, DVector, Dyn, Vector3, LU};

use super::{devectorize, kron_eye3, vectorize, ConstraintSet, DynamicsError, MaterialSpec, StructureState, Wrench};
use crate::topology::{Structure, Topology};

/// Node mass matrix `C_bᵀ Ĵ C_b + C_rᵀ m̂_b C_r` plus string-node point masses.
pub fn assemble_ms(t: &Topology, material: &MaterialSpec) -> Result<DMatrix<f64>, DynamicsError> {
    material.validate(t)?;
    let j = DMatrix::from_diagonal(&DVector::from_vec(material.inertia()));
    let m = DMatrix::from_diagonal(&DVector::from_column_slice(&material.bar_mass));
    let mut ms = t.c_b.transpose() * j * &t.c_b + t.c_r.transpose() * m * &t.c_r;
    for (k, mass) in material.node_mass.iter().enumerate() {
        ms[(2 * t.beta + k, 2 * t.beta + k)] += mass;
    }
    Ok(ms)
}

/// Stiffness operator `C_sᵀ γ̂ C_s − C_bᵀ λ̂ C_b`.
pub fn assemble_ks(t: &Topology, gamma: &DVector<f64>, lambda: &DVector<f64>) -> Result<DMatrix<f64>, DynamicsError> {
    if gamma.len() != t.alpha || lambda.len() != t.beta {
        return Err(DynamicsError::Dimension(format!(
            "gamma has {} entries (expected {}), lambda has {} (expected {})",
            gamma.len(),
            t.alpha,
            lambda.len(),
            t.beta
        )));
    }
    Ok(t.c_s.transpose() * DMatrix::from_diagonal(gamma) * &t.c_s - t.c_b.transpose() * DMatrix::from_diagonal(lambda) * &t.c_b)
}

/// Affine dependence of the bar force densities on the string force
/// densities and wheel speeds: `λ = Λ γ + τ + Ξ ω_w`.
#[derive(Clone, Debug)]
pub struct LambdaMap {
    /// `β × α`.
    pub lambda: DMatrix<f64>,
    /// `β`, everything independent of `γ` and `ω_w`.
    pub tau: DVector<f64>,
    /// `β × β` gyroscopic coupling.
    pub wheel: DMatrix<f64>,
}

impl LambdaMap {
    pub fn evaluate(&self, gamma: &DVector<f64>, omega_w: &DVector<f64>) -> DVector<f64> {
        &self.lambda * gamma + &self.tau + &self.wheel * omega_w
    }
}

#[derive(Clone, Debug)]
pub struct Accelerations {
    /// `3 × n` node accelerations.
    pub n_ddot: DMatrix<f64>,
    /// Bar force densities.
    pub lambda: DVector<f64>,
    /// Lagrange multipliers of the pruned constraint rows.
    pub lagrange: DVector<f64>,
    pub omega_w_dot: DVector<f64>,
}

/// Topology, materials and constraints with the constant matrices cached.
#[derive(Clone, Debug)]
pub struct Model {
    pub topology: Topology,
    pub material: MaterialSpec,
    pub constraints: ConstraintSet,
    pub ms: DMatrix<f64>,
    pub ms_inv: DMatrix<f64>,
    /// `V₂ (V₂ᵀ ℳ V₂)⁻¹ V₂ᵀ`.
    pub m_sn: DMatrix<f64>,
    /// `ℳ ℳ_sn`, maps applied forces to their constraint-compatible part.
    q: DMatrix<f64>,
    /// `A ℳ⁻¹`.
    a_mi: DMatrix<f64>,
    /// `A ℳ⁻¹ Aᵀ`.
    a_mi_at: DMatrix<f64>,
    bars: Vec<[usize; 2]>,
    strings: Vec<[usize; 2]>,
    inertia: Vec<f64>,
    wheel_inertia: Vec<f64>,
}

impl Model {
    /// Builds the model and checks the declared bar lengths against the
    /// nominal geometry.
    pub fn new(s: &Structure, material: MaterialSpec, constraints: ConstraintSet) -> Result<Self, DynamicsError> {
        let model = Self::from_topology(s.topology.clone(), material, constraints)?;
        for (i, l) in s.bar_lengths().iter().enumerate() {
            let declared = model.material.bar_length[i];
            if (l - declared).abs() > 1e-9 * declared {
                return Err(DynamicsError::Material(format!("bar {i} has length {l} but material declares {declared}")));
            }
        }
        let residual = model.constraints.residual(&vectorize(&s.nodes));
        if residual > 1e-9 {
            return Err(DynamicsError::InconsistentConstraints { residual });
        }
        Ok(model)
    }

    pub fn from_topology(topology: Topology, material: MaterialSpec, constraints: ConstraintSet) -> Result<Self, DynamicsError> {
        let ms = assemble_ms(&topology, &material)?;
        let nn = topology.n_nodes();
        if constraints.a.ncols() != 3 * nn {
            return Err(DynamicsError::Dimension(format!(
                "constraints act on {} coordinates, structure has {}",
                constraints.a.ncols(),
                3 * nn
            )));
        }
        let ms_inv = ms
            .clone()
            .cholesky()
            .ok_or_else(|| DynamicsError::Material("mass matrix is not positive definite".into()))?
            .inverse();
        let big_m = kron_eye3(&ms);
        let v2 = &constraints.v2;
        let m2 = v2.transpose() * &big_m * v2;
        let m2_inv = if m2.nrows() == 0 {
            m2
        } else {
            m2.cholesky()
                .ok_or_else(|| DynamicsError::ConstraintDegeneracy("reduced mass matrix is not positive definite".into()))?
                .inverse()
        };
        let m_sn = v2 * m2_inv * v2.transpose();
        let q = &big_m * &m_sn;
        let a_mi = &constraints.a * kron_eye3(&ms_inv);
        let a_mi_at = &a_mi * constraints.a.transpose();
        Ok(Self {
            bars: topology.bar_ends(),
            strings: topology.string_ends(),
            inertia: material.inertia(),
            wheel_inertia: material.wheel_inertia(),
            topology,
            material,
            constraints,
            ms,
            ms_inv,
            m_sn,
            q,
            a_mi,
            a_mi_at,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.topology.n_nodes()
    }

    pub fn bars(&self) -> &[[usize; 2]] {
        &self.bars
    }

    pub fn strings(&self) -> &[[usize; 2]] {
        &self.strings
    }

    /// `ℳ v` without forming the Kronecker product.
    pub fn apply_mass(&self, v: &DVector<f64>) -> DVector<f64> {
        vectorize(&(devectorize(v, self.n_nodes()) * &self.ms))
    }

    /// `ℳ⁻¹ v` without forming the Kronecker product.
    pub fn apply_mass_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        vectorize(&(devectorize(v, self.n_nodes()) * &self.ms_inv))
    }

    /// String forces `−S γ̂ C_s`.
    pub fn string_forces(&self, n: &DMatrix<f64>, gamma: &DVector<f64>) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(3, self.n_nodes());
        for (k, [a, b]) in self.strings.iter().enumerate() {
            let s = n.column(*b) - n.column(*a);
            let fk = s * gamma[k];
            let mut ca = f.column_mut(*a);
            ca += &fk;
            let mut cb = f.column_mut(*b);
            cb -= &fk;
        }
        f
    }

    /// Bar forces `B λ̂ C_b`.
    pub fn bar_forces(&self, n: &DMatrix<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(3, self.n_nodes());
        for (i, [a, b]) in self.bars.iter().enumerate() {
            let fb = (n.column(*b) - n.column(*a)) * lambda[i];
            let mut ca = f.column_mut(*a);
            ca -= &fb;
            let mut cb = f.column_mut(*b);
            cb += &fb;
        }
        f
    }

    fn bar_vectors(&self, m: &DMatrix<f64>, i: usize) -> Vector3<f64> {
        let [a, b] = self.bars[i];
        Vector3::from_iterator((m.column(b) - m.column(a)).iter().copied())
    }

    /// `3n × β` gyroscopic nodal forces per unit wheel speed.
    pub fn wheel_force_columns(&self, state: &StructureState) -> DMatrix<f64> {
        let nn = self.n_nodes();
        let mut g = DMatrix::zeros(3 * nn, self.topology.beta);
        for (i, [a, b]) in self.bars.iter().enumerate() {
            let bi = self.bar_vectors(&state.n, i);
            let bdi = self.bar_vectors(&state.n_dot, i);
            let f = bi.cross(&bdi) * (self.wheel_inertia[i] / self.material.bar_length[i]);
            for ax in 0..3 {
                g[(ax * nn + b, i)] = f[ax];
                g[(ax * nn + a, i)] = -f[ax];
            }
        }
        g
    }

    /// Gyroscopic and transverse-torque nodal forces, zero when the wheels
    /// are at rest and no torque is applied.
    pub fn gyro_wrench(&self, state: &StructureState, wrench: &Wrench) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(3, self.n_nodes());
        for (i, [a, b]) in self.bars.iter().enumerate() {
            let bi = self.bar_vectors(&state.n, i);
            let bdi = self.bar_vectors(&state.n_dot, i);
            let l = self.material.bar_length[i];
            let mut fi = bi.cross(&bdi) * (self.wheel_inertia[i] * state.omega_w[i] / l);
            if let Some(torque) = &wrench.torque {
                let ti = Vector3::new(torque[(0, i)], torque[(1, i)], torque[(2, i)]);
                fi -= bi.cross(&ti) / (l * l);
            }
            for ax in 0..3 {
                f[(ax, *b)] += fi[ax];
                f[(ax, *a)] -= fi[ax];
            }
        }
        f
    }

    /// All nodal forces except string and bar forces.
    pub fn applied_forces(&self, state: &StructureState, wrench: &Wrench) -> DMatrix<f64> {
        &wrench.w + &wrench.w_d + self.gyro_wrench(state, wrench)
    }

    /// Same as [`Self::applied_forces`] without the gyroscopic wheel term.
    pub fn applied_forces_no_wheel(&self, state: &StructureState, wrench: &Wrench) -> DMatrix<f64> {
        let mut still = state.clone();
        still.omega_w.fill(0.0);
        self.applied_forces(&still, wrench)
    }

    /// `−J_i ‖ḃ_i‖² / ‖b_i‖²`. The current length stands in for `l_i` so
    /// that length drift is not amplified in compressed bars.
    fn inertial_term(&self, state: &StructureState) -> DVector<f64> {
        DVector::from_fn(self.topology.beta, |i, _| {
            let bd = self.bar_vectors(&state.n_dot, i);
            -self.inertia[i] * bd.norm_squared() / self.bar_vectors(&state.n, i).norm_squared()
        })
    }

    /// `β × 3n` map from nodal forces to their bar force density
    /// contribution `−½ ‖b‖⁻² bᵀ (f_end − f_start)`.
    fn force_projector(&self, n: &DMatrix<f64>) -> DMatrix<f64> {
        let nn = self.n_nodes();
        let mut p = DMatrix::zeros(self.topology.beta, 3 * nn);
        for (i, [a, b]) in self.bars.iter().enumerate() {
            let bi = self.bar_vectors(n, i);
            let c = 0.5 / bi.norm_squared();
            for ax in 0..3 {
                p[(i, ax * nn + b)] = -c * bi[ax];
                p[(i, ax * nn + a)] = c * bi[ax];
            }
        }
        p
    }

    /// `3n × β` bar force columns per unit force density.
    pub fn bar_force_columns(&self, n: &DMatrix<f64>) -> DMatrix<f64> {
        let nn = self.n_nodes();
        let mut f = DMatrix::zeros(3 * nn, self.topology.beta);
        for (i, [a, b]) in self.bars.iter().enumerate() {
            let bi = self.bar_vectors(n, i);
            for ax in 0..3 {
                f[(ax * nn + b, i)] = bi[ax];
                f[(ax * nn + a, i)] = -bi[ax];
            }
        }
        f
    }

    /// `3n × α` string force columns per unit force density.
    pub fn string_force_columns(&self, n: &DMatrix<f64>) -> DMatrix<f64> {
        let nn = self.n_nodes();
        let mut f = DMatrix::zeros(3 * nn, self.topology.alpha);
        for (k, [a, b]) in self.strings.iter().enumerate() {
            let s = n.column(*b) - n.column(*a);
            for ax in 0..3 {
                f[(ax * nn + b, k)] -= s[ax];
                f[(ax * nn + a, k)] += s[ax];
            }
        }
        f
    }

    /// Factorizes the bar force density system with the constraint forces
    /// eliminated: `(−P Q F_l) λ = τ_J + P Q f`.
    fn coupling(&self, n: &DMatrix<f64>) -> Result<(DMatrix<f64>, LU<f64, Dyn, Dyn>), DynamicsError> {
        let p = self.force_projector(n);
        let pq = if self.constraints.rank() == 0 { p } else { p * &self.q };
        let h = -(&pq * self.bar_force_columns(n));
        let lu = h.lu();
        if !lu.is_invertible() {
            return Err(DynamicsError::ConstraintDegeneracy("bar force densities are not determined by the constraints".into()));
        }
        Ok((pq, lu))
    }

    fn solve(lu: &LU<f64, Dyn, Dyn>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, DynamicsError> {
        lu.solve(rhs)
            .ok_or_else(|| DynamicsError::ConstraintDegeneracy("singular bar force density system".into()))
    }

    /// Bar force densities. With `lagrange` given, evaluates the closed-form
    /// expression including `Aᵀ ω`; otherwise eliminates the constraint
    /// forces exactly.
    pub fn compute_lambda(
        &self,
        state: &StructureState,
        wrench: &Wrench,
        gamma: &DVector<f64>,
        lagrange: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>, DynamicsError> {
        let mut f = vectorize(&(self.applied_forces(state, wrench) + self.string_forces(&state.n, gamma)));
        match lagrange {
            Some(omega) => {
                if omega.len() != self.constraints.rank() {
                    return Err(DynamicsError::Dimension(format!(
                        "{} multipliers for {} constraints",
                        omega.len(),
                        self.constraints.rank()
                    )));
                }
                f += self.constraints.a.transpose() * omega;
                Ok(self.inertial_term(state) + self.force_projector(&state.n) * f)
            }
            None => {
                let (pq, lu) = self.coupling(&state.n)?;
                let rhs = self.inertial_term(state) + pq * f;
                Ok(Self::solve(&lu, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?.column(0).into_owned())
            }
        }
    }

    /// `λ = Λ γ + τ + Ξ ω_w` at the current state with constraint forces eliminated.
    pub fn lambda_map(&self, state: &StructureState, wrench: &Wrench) -> Result<LambdaMap, DynamicsError> {
        self.lambda_map_for(state, &self.applied_forces_no_wheel(state, wrench), None)
    }

    /// Affine bar force density map for the given nodal forces (excluding
    /// strings, bars and wheels). With `lagrange`, the constraint forces are
    /// fixed at `Aᵀ ω`; otherwise they are eliminated exactly.
    pub fn lambda_map_for(&self, state: &StructureState, forces: &DMatrix<f64>, lagrange: Option<&DVector<f64>>) -> Result<LambdaMap, DynamicsError> {
        let beta = self.topology.beta;
        let alpha = self.topology.alpha;
        let fg = self.string_force_columns(&state.n);
        let gw = self.wheel_force_columns(state);
        let mut f0 = vectorize(forces);
        if let Some(omega) = lagrange {
            if omega.len() != self.constraints.rank() {
                return Err(DynamicsError::Dimension(format!(
                    "{} multipliers for {} constraints",
                    omega.len(),
                    self.constraints.rank()
                )));
            }
            f0 += self.constraints.a.transpose() * omega;
            let p = self.force_projector(&state.n);
            return Ok(LambdaMap {
                lambda: &p * fg,
                wheel: &p * gw,
                tau: self.inertial_term(state) + &p * f0,
            });
        }
        let (pq, lu) = self.coupling(&state.n)?;
        let mut rhs = DMatrix::zeros(beta, alpha + beta + 1);
        rhs.view_mut((0, 0), (beta, alpha)).copy_from(&(&pq * fg));
        rhs.view_mut((0, alpha), (beta, beta)).copy_from(&(&pq * gw));
        rhs.set_column(alpha + beta, &(self.inertial_term(state) + &pq * f0));
        let sol = Self::solve(&lu, &rhs)?;
        Ok(LambdaMap {
            lambda: sol.columns(0, alpha).into_owned(),
            wheel: sol.columns(alpha, beta).into_owned(),
            tau: sol.column(alpha + beta).into_owned(),
        })
    }

    /// Node accelerations `ℳ_sn (f + F_l λ)` with exactly coupled `λ`, plus the
    /// multipliers of the eliminated constraint forces.
    pub fn accelerations(&self, state: &StructureState, wrench: &Wrench, gamma: &DVector<f64>) -> Result<Accelerations, DynamicsError> {
        let f = self.applied_forces(state, wrench) + self.string_forces(&state.n, gamma);
        let lambda = self.compute_lambda_from_forces(state, &f)?;
        let total = vectorize(&(f + self.bar_forces(&state.n, &lambda)));
        let nd = &self.m_sn * &total;
        let lagrange = if self.constraints.rank() == 0 {
            DVector::zeros(0)
        } else {
            self.constraints.multipliers(&(self.apply_mass(&nd) - &total))
        };
        Ok(Accelerations {
            n_ddot: devectorize(&nd, self.n_nodes()),
            lambda,
            lagrange,
            omega_w_dot: wrench.omega_w_dot(&self.material),
        })
    }

    /// `3n × 3n` sensitivity `∂n̈/∂f = ℳ_sn (I + F_l ∂λ/∂f)` of the
    /// accelerations to applied nodal forces, bar response included.
    pub fn force_response(&self, n: &DMatrix<f64>) -> Result<DMatrix<f64>, DynamicsError> {
        let (pq, lu) = self.coupling(n)?;
        let dl = Self::solve(&lu, &pq)?;
        let dim = 3 * self.n_nodes();
        Ok(&self.m_sn * (DMatrix::identity(dim, dim) + self.bar_force_columns(n) * dl))
    }

    fn compute_lambda_from_forces(&self, state: &StructureState, f: &DMatrix<f64>) -> Result<DVector<f64>, DynamicsError> {
        let (pq, lu) = self.coupling(&state.n)?;
        let rhs = self.inertial_term(state) + pq * vectorize(f);
        lu.solve(&rhs)
            .ok_or_else(|| DynamicsError::ConstraintDegeneracy("singular bar force density system".into()))
    }

    /// Full-order accelerations `ℳ⁻¹ (f + F_l λ + Aᵀ ω)` from the joint
    /// linear system in `(λ, ω)`.
    pub fn accelerations_lagrange(&self, state: &StructureState, wrench: &Wrench, gamma: &DVector<f64>) -> Result<Accelerations, DynamicsError> {
        let beta = self.topology.beta;
        let r = self.constraints.rank();
        let f = vectorize(&(self.applied_forces(state, wrench) + self.string_forces(&state.n, gamma)));
        let p = self.force_projector(&state.n);
        let fl = self.bar_force_columns(&state.n);
        let at = self.constraints.a.transpose();
        let mut h = DMatrix::zeros(beta + r, beta + r);
        h.view_mut((0, 0), (beta, beta)).fill_with_identity();
        h.view_mut((0, beta), (beta, r)).copy_from(&(-(&p * &at)));
        h.view_mut((beta, 0), (r, beta)).copy_from(&(&self.a_mi * &fl));
        h.view_mut((beta, beta), (r, r)).copy_from(&self.a_mi_at);
        let mut rhs = DVector::zeros(beta + r);
        rhs.rows_mut(0, beta).copy_from(&(self.inertial_term(state) + &p * &f));
        rhs.rows_mut(beta, r).copy_from(&(-(&self.a_mi * &f)));
        let x = h
            .lu()
            .solve(&rhs)
            .ok_or_else(|| DynamicsError::ConstraintDegeneracy("singular joint (λ, ω) system".into()))?;
        let lambda = x.rows(0, beta).into_owned();
        let lagrange = x.rows(beta, r).into_owned();
        let total = f + fl * &lambda + at * &lagrange;
        Ok(Accelerations {
            n_ddot: devectorize(&self.apply_mass_inv(&total), self.n_nodes()),
            lambda,
            lagrange,
            omega_w_dot: wrench.omega_w_dot(&self.material),
        })
    }

    /// Largest relative bar length error.
    pub fn bar_length_error(&self, n: &DMatrix<f64>) -> f64 {
        (0..self.topology.beta)
            .map(|i| {
                let l = self.material.bar_length[i];
                (self.bar_vectors(n, i).norm() - l).abs() / l
            })
            .fold(0.0, f64::max)
    }

    /// `‖A vec(N) − d‖∞`.
    pub fn constraint_residual(&self, n: &DMatrix<f64>) -> f64 {
        self.constraints.residual(&vectorize(n))
    }
}
