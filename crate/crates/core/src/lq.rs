//! Box-constrained linear-quadratic subproblem solver.
//!
//! Solves
//!
//! ```text
//! min  sum_k 1/2 dx_k' Q_k dx_k + q_k' dx_k + 1/2 du_k' R_k du_k + r_k' du_k
//!      + 1/2 dx_N' P dx_N + p' dx_N
//! s.t. dx_{k+1} = A_k dx_k + B_k du_k + c_k,   dx_0 given,
//!      lb_k <= du_k <= ub_k
//! ```
//!
//! with a primal active-set loop on the input bounds. Every working set is an
//! equality-constrained LQ problem solved by a Riccati recursion in which the
//! bound-fixed input components are eliminated.

use nalgebra::Matrix4;

use crate::dynamics::{InputMatrix, InputVector, StateMatrix, StateVector, INPUT_DIM};

#[derive(Debug, Clone)]
pub struct LqStage {
    pub a: StateMatrix,
    pub b: InputMatrix,
    pub c: StateVector,
    pub q: StateMatrix,
    pub q_lin: StateVector,
    pub r: Matrix4<f64>,
    pub r_lin: InputVector,
    pub lower: InputVector,
    pub upper: InputVector,
}

#[derive(Debug, Clone)]
pub struct LqSolution {
    pub dx: Vec<StateVector>,
    pub du: Vec<InputVector>,
    /// Costates: `lambda[k]` multiplies the dynamics constraint into knot `k`.
    pub lambda: Vec<StateVector>,
    pub active_set_iterations: usize,
    /// False when the active-set loop hit its iteration cap.
    pub optimal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

const REGULARIZATION: f64 = 1e-9;
const MULTIPLIER_TOL: f64 = 1e-10;

struct Gains {
    k: Vec<nalgebra::SMatrix<f64, INPUT_DIM, 9>>,
    kff: Vec<InputVector>,
    p: Vec<StateMatrix>,
    p_lin: Vec<StateVector>,
}

fn backward_pass(
    stages: &[LqStage],
    terminal: (&StateMatrix, &StateVector),
    working: &[[Bound; INPUT_DIM]],
) -> Gains {
    let n = stages.len();
    let mut gains = Gains {
        k: vec![nalgebra::SMatrix::zeros(); n],
        kff: vec![InputVector::zeros(); n],
        p: vec![StateMatrix::zeros(); n + 1],
        p_lin: vec![StateVector::zeros(); n + 1],
    };
    gains.p[n] = *terminal.0;
    gains.p_lin[n] = *terminal.1;
    for k in (0..n).rev() {
        let st = &stages[k];
        let p_next = gains.p[k + 1];
        let p_lin_next = gains.p_lin[k + 1];
        let fixed = fixed_values(st, &working[k]);
        let c_eff = st.c + st.b * fixed;
        let mut g = st.r + st.b.transpose() * p_next * st.b;
        let mut rhs = st.r_lin + st.r * fixed + st.b.transpose() * (p_next * c_eff + p_lin_next);
        let mut hx = st.b.transpose() * p_next * st.a;
        for j in 0..INPUT_DIM {
            if working[k][j] != Bound::Free {
                g.row_mut(j).fill(0.0);
                g.column_mut(j).fill(0.0);
                g[(j, j)] = 1.0;
                rhs[j] = 0.0;
                hx.row_mut(j).fill(0.0);
            } else {
                g[(j, j)] += REGULARIZATION;
            }
        }
        let chol = nalgebra::Cholesky::new(g).unwrap_or_else(|| {
            // fall back to a heavier shift; G is PSD up to roundoff
            let shift = 1e-6 * (1.0 + g.diagonal().abs().max());
            nalgebra::Cholesky::new(g + Matrix4::identity() * shift)
                .expect("regularized Hessian is positive definite")
        });
        let kmat = -chol.solve(&hx);
        let kff = -chol.solve(&rhs);
        let mut p =
            st.q + st.a.transpose() * p_next * st.a + st.a.transpose() * p_next * st.b * kmat;
        p = 0.5 * (p + p.transpose());
        let p_lin =
            st.q_lin + st.a.transpose() * (p_next * c_eff + p_lin_next) + kmat.transpose() * rhs;
        gains.k[k] = kmat;
        gains.kff[k] = kff;
        gains.p[k] = p;
        gains.p_lin[k] = p_lin;
    }
    gains
}

fn fixed_values(st: &LqStage, working: &[Bound; INPUT_DIM]) -> InputVector {
    InputVector::from_fn(|j, _| match working[j] {
        Bound::Free => 0.0,
        Bound::Lower => st.lower[j],
        Bound::Upper => st.upper[j],
    })
}

fn forward_pass(
    stages: &[LqStage],
    dx0: &StateVector,
    gains: &Gains,
    working: &[[Bound; INPUT_DIM]],
) -> (Vec<StateVector>, Vec<InputVector>, Vec<StateVector>) {
    let n = stages.len();
    let mut dx = Vec::with_capacity(n + 1);
    let mut du = Vec::with_capacity(n);
    dx.push(*dx0);
    for k in 0..n {
        let st = &stages[k];
        let u = fixed_values(st, &working[k]) + gains.k[k] * dx[k] + gains.kff[k];
        dx.push(st.a * dx[k] + st.b * u + st.c);
        du.push(u);
    }
    let lambda = (0..=n)
        .map(|k| gains.p[k] * dx[k] + gains.p_lin[k])
        .collect();
    (dx, du, lambda)
}

/// Gradient of the Lagrangian with respect to `du_k`.
fn input_gradient(st: &LqStage, du: &InputVector, lambda_next: &StateVector) -> InputVector {
    st.r * du + st.r_lin + st.b.transpose() * lambda_next
}

pub fn solve(
    stages: &[LqStage],
    terminal: (&StateMatrix, &StateVector),
    dx0: &StateVector,
) -> LqSolution {
    let n = stages.len();
    let tol = 1e-12;
    // Feasible start: zero input step (callers keep iterates inside the box).
    let mut du: Vec<InputVector> = stages
        .iter()
        .map(|st| {
            InputVector::from_fn(|j, _| 0.0f64.clamp(st.lower[j], st.upper[j].max(st.lower[j])))
        })
        .collect();
    let mut dx = Vec::with_capacity(n + 1);
    dx.push(*dx0);
    for k in 0..n {
        dx.push(stages[k].a * dx[k] + stages[k].b * du[k] + stages[k].c);
    }
    let mut working: Vec<[Bound; INPUT_DIM]> = stages
        .iter()
        .zip(&du)
        .map(|(st, u)| {
            let mut w = [Bound::Free; INPUT_DIM];
            for j in 0..INPUT_DIM {
                if u[j] <= st.lower[j] + tol {
                    w[j] = Bound::Lower;
                } else if u[j] >= st.upper[j] - tol {
                    w[j] = Bound::Upper;
                }
            }
            w
        })
        .collect();

    let max_iter = 4 * n * INPUT_DIM + 10;
    let mut lambda = Vec::new();
    for iter in 0..max_iter {
        let gains = backward_pass(stages, terminal, &working);
        let (dx_new, du_new, lambda_new) = forward_pass(stages, dx0, &gains, &working);

        // largest feasible fraction of the step toward the EQP solution
        let mut alpha = 1.0;
        let mut blocking = None;
        for k in 0..n {
            for j in 0..INPUT_DIM {
                if working[k][j] != Bound::Free {
                    continue;
                }
                let (from, to) = (du[k][j], du_new[k][j]);
                if to > stages[k].upper[j] + tol {
                    let a = ((stages[k].upper[j] - from) / (to - from)).clamp(0.0, 1.0);
                    if a < alpha {
                        alpha = a;
                        blocking = Some((k, j, Bound::Upper));
                    }
                } else if to < stages[k].lower[j] - tol {
                    let a = ((stages[k].lower[j] - from) / (to - from)).clamp(0.0, 1.0);
                    if a < alpha {
                        alpha = a;
                        blocking = Some((k, j, Bound::Lower));
                    }
                }
            }
        }

        if let Some((k, j, side)) = blocking {
            for i in 0..=n {
                dx[i] = dx[i] + alpha * (dx_new[i] - dx[i]);
            }
            for i in 0..n {
                du[i] = du[i] + alpha * (du_new[i] - du[i]);
            }
            working[k][j] = side;
            du[k][j] = match side {
                Bound::Upper => stages[k].upper[j],
                _ => stages[k].lower[j],
            };
            continue;
        }

        dx = dx_new;
        du = du_new;
        lambda = lambda_new;

        // drop the bound with the most negative multiplier
        let mut worst: Option<(usize, usize, f64)> = None;
        for k in 0..n {
            let g = input_gradient(&stages[k], &du[k], &lambda[k + 1]);
            for j in 0..INPUT_DIM {
                let mult = match working[k][j] {
                    Bound::Free => continue,
                    Bound::Lower => g[j],
                    Bound::Upper => -g[j],
                };
                if mult < -MULTIPLIER_TOL && worst.is_none_or(|(_, _, m)| mult < m) {
                    worst = Some((k, j, mult));
                }
            }
        }
        match worst {
            Some((k, j, _)) => working[k][j] = Bound::Free,
            None => {
                return LqSolution {
                    dx,
                    du,
                    lambda,
                    active_set_iterations: iter + 1,
                    optimal: true,
                };
            }
        }
    }
    if lambda.is_empty() {
        let gains = backward_pass(stages, terminal, &working);
        lambda = forward_pass(stages, dx0, &gains, &working).2;
    }
    // project onto the box in case the cap was hit mid-way
    for (st, u) in stages.iter().zip(du.iter_mut()) {
        for j in 0..INPUT_DIM {
            u[j] = u[j].clamp(st.lower[j], st.upper[j]);
        }
    }
    LqSolution {
        dx,
        du,
        lambda,
        active_set_iterations: max_iter,
        optimal: false,
    }
}
