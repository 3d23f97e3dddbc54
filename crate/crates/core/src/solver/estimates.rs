use super::BsdeSolution;
use crate::drivers::{Driver, DriverContext};
use crate::error::{BsdeError, Result};
use crate::scenario::Lattice;

/// Multiplicative slack covering the O(dt) bias of the discrete norms.
pub const ESTIMATE_SLACK: f64 = 1.05;

/// Valid `(eta, beta)` for a lambda-constant `C`: `eta = 1/(2C^2)` and
/// `beta = 3/eta + 2C`; `(1, 3)` when `C = 0`.
pub fn default_estimate_parameters(c: f64) -> (f64, f64) {
    if c == 0.0 {
        return (1.0, 3.0);
    }
    let eta = 1.0 / (2.0 * c * c);
    (eta, 3.0 / eta + 2.0 * c)
}

/// Both sides of the discrete a priori estimates for two solutions on one lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateCertificate {
    pub eta: f64,
    pub beta: f64,
    pub lambda_constant: f64,
    /// `||Y1 - Y2||_beta^2`.
    pub y_lhs: f64,
    /// `T [e^{beta T} E[xi_bar^2] + eta ||g_bar||_beta^2]`.
    pub y_rhs: f64,
    /// `||Z_bar||_beta^2 + ||K_bar||_{lambda,beta}^2`; `None` when `eta C^2 = 1`.
    pub zk_lhs: Option<f64>,
    pub zk_rhs: Option<f64>,
    pub pass: bool,
    /// Smallest `slack * rhs - lhs` over the checked inequalities.
    pub margin: f64,
}

/// Discrete estimates with left-endpoint sums `sum_i e^{beta t_i} dt_i E[.]`.
/// `C` is the lambda-constant of `g1`.
#[allow(clippy::too_many_arguments)]
pub fn apriori_check<L: Lattice>(
    lat: &L,
    sol1: &BsdeSolution,
    sol2: &BsdeSolution,
    g1: &Driver,
    g2: &Driver,
    eta: f64,
    beta: f64,
) -> Result<EstimateCertificate> {
    let c = g1.lambda_constant();
    if !(eta > 0.0 && beta > 0.0) || beta < 3.0 / eta + 2.0 * c || (c > 0.0 && eta > 1.0 / (c * c)) {
        return Err(BsdeError::InvalidArgument(format!(
            "(eta, beta) = ({eta}, {beta}) violates beta >= 3/eta + 2C, eta <= 1/C^2 with C = {c}"
        )));
    }
    let m = sol1.levels();
    if sol2.levels() != m || sol1.y[m].len() != lat.level_len(m) || sol2.y[m].len() != lat.level_len(m) {
        return Err(BsdeError::Mismatch("solutions must live on the same lattice".into()));
    }
    let grid = lat.grid();
    let horizon = grid.time(m);
    let (mut ny, mut nz, mut nk, mut ng) = (0.0, 0.0, 0.0, 0.0);
    for level in 0..m {
        let w = (beta * grid.time(level)).exp() * grid.dt(level);
        for idx in 0..lat.level_len(level) {
            let st = lat.state(level, idx);
            let ctx = DriverContext {
                t: st.t,
                lambda: st.lambda,
                defaulted: st.defaulted,
            };
            let (y2, z2, k2) = (sol2.y[level][idx], sol2.z[level][idx], sol2.k[level][idx]);
            let gbar = g1.value(&ctx, y2, z2, k2) - g2.value(&ctx, y2, z2, k2);
            let p = st.probability * w;
            ny += p * (sol1.y[level][idx] - y2).powi(2);
            nz += p * (sol1.z[level][idx] - z2).powi(2);
            nk += p * st.lambda * (sol1.k[level][idx] - k2).powi(2);
            ng += p * gbar * gbar;
        }
    }
    let xi2: f64 = (0..lat.level_len(m))
        .map(|i| lat.state(m, i).probability * (sol1.y[m][i] - sol2.y[m][i]).powi(2))
        .sum();
    let core = (beta * horizon).exp() * xi2 + eta * ng;
    let y_rhs = horizon * core;
    let mut margin = ESTIMATE_SLACK * y_rhs - ny;
    let mut pass = ny <= ESTIMATE_SLACK * y_rhs + 1e-14;
    let (zk_lhs, zk_rhs) = if eta * c * c < 1.0 {
        let lhs = nz + nk;
        let rhs = core / (1.0 - eta * c * c);
        margin = margin.min(ESTIMATE_SLACK * rhs - lhs);
        pass &= lhs <= ESTIMATE_SLACK * rhs + 1e-14;
        (Some(lhs), Some(rhs))
    } else {
        (None, None)
    };
    Ok(EstimateCertificate {
        eta,
        beta,
        lambda_constant: c,
        y_lhs: ny,
        y_rhs,
        zk_lhs,
        zk_rhs,
        pass,
        margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_tree, IntensityModel, TimeGrid, TreeOptions};
    use crate::solver::{solve_tree, Claim, DividendProcess};

    #[test]
    fn parameters_satisfy_constraints() {
        for c in [0.0, 0.3, 1.0, 2.5] {
            let (eta, beta) = default_estimate_parameters(c);
            assert!(beta >= 3.0 / eta + 2.0 * c);
            assert!(c == 0.0 || eta < 1.0 / (c * c));
        }
    }

    #[test]
    fn identical_and_shifted_terminals() {
        let t = build_tree(
            &TimeGrid::uniform(1.0, 5).unwrap(),
            &IntensityModel::Constant(1.0),
            TreeOptions::default(),
        )
        .unwrap();
        let g = Driver::lambda_linear(0.1, -0.4, 0.5, 0.3, 1.0).unwrap();
        let none = DividendProcess::none();
        let a = solve_tree(&t, &g, &Claim::expression("w + n").unwrap(), &none).unwrap();
        let b = solve_tree(&t, &g, &Claim::expression("w + n - 0.7").unwrap(), &none).unwrap();
        let (eta, beta) = default_estimate_parameters(g.lambda_constant());
        let same = apriori_check(&t, &a, &a, &g, &g, eta, beta).unwrap();
        assert_eq!(same.y_lhs, 0.0);
        assert!(same.pass);
        let shifted = apriori_check(&t, &a, &b, &g, &g, eta, beta).unwrap();
        assert!(shifted.pass, "{shifted:?}");
        assert!(apriori_check(&t, &a, &b, &g, &g, eta, 0.1).is_err());
    }
}
