//! Value-iteration oracle for the subsidy problem.
//!
//! Beliefs reachable from any start form the idle orbit `pi, Q(pi), ...`
//! plus the orbits of the two feedback beliefs `p` and `r`. Iterating the
//! Bellman operator on the orbits of `p` and `r` (truncated once the orbit
//! has mixed or the discount has killed the tail) gives the values at those
//! two beliefs; the value at any other belief then follows by one backward
//! pass along its own orbit. No interpolation is involved.

use super::SubsidyProblem;
use crate::channel::Belief;
use crate::error::{Error, Result};
use crate::user::UserModel;

const MAX_ORBIT: usize = 1_000_000;
const SWEEP_TOL: f64 = 1e-13;

/// Converged oracle solution: values at `p` and `r` from which every other
/// value is recovered.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    user: UserModel,
    beta: f64,
    omega: f64,
    orbit_len: usize,
    v_p: f64,
    v_r: f64,
    sweeps: usize,
}

fn orbit_length(user: &UserModel, beta: f64) -> usize {
    let d = user.channel().memory().abs();
    let t_disc = if beta == 0.0 {
        1.0
    } else {
        ((1e-16 * (1.0 - beta)).ln() / beta.ln()).ceil()
    };
    let t_mix = if d == 0.0 {
        1.0
    } else if d >= 1.0 {
        f64::INFINITY
    } else {
        (1e-17_f64.ln() / d.ln()).ceil()
    };
    let t = t_disc.min(t_mix).max(1.0);
    if t >= MAX_ORBIT as f64 {
        MAX_ORBIT
    } else {
        t as usize
    }
}

impl OracleSolution {
    pub fn solve(prob: &SubsidyProblem, max_sweeps: usize) -> Result<Self> {
        Self::solve_from(prob, max_sweeps, None)
    }

    /// Solves starting from given anchor estimates (warm start).
    pub(crate) fn solve_from(
        prob: &SubsidyProblem,
        max_sweeps: usize,
        start: Option<(f64, f64)>,
    ) -> Result<Self> {
        let user = prob.user().clone();
        let beta = prob.beta();
        let omega = prob.omega();
        let orbit_len = orbit_length(&user, beta);
        let (p, r) = (user.channel().p(), user.channel().r());
        let orbit = |x0: f64| {
            let mut xs = Vec::with_capacity(orbit_len + 1);
            let mut x = x0;
            xs.push(x);
            for _ in 0..orbit_len {
                x = user.channel().q_raw(x);
                xs.push(x);
            }
            xs
        };
        let orbit_p = orbit(p);
        let orbit_r = orbit(r);
        let mut sol = OracleSolution {
            user: user.clone(),
            beta,
            omega,
            orbit_len,
            v_p: 0.0,
            v_r: 0.0,
            sweeps: 0,
        };
        let (mut v_p, mut v_r) = start.unwrap_or((omega.max(0.0), omega.max(0.0)));
        let mut change = f64::INFINITY;
        for sweep in 1..=max_sweeps {
            sol.v_p = v_p;
            sol.v_r = v_r;
            let new_p = sol.backward(&orbit_p);
            let new_r = sol.backward(&orbit_r);
            change = (new_p - v_p).abs().max((new_r - v_r).abs());
            v_p = new_p;
            v_r = new_r;
            if change <= SWEEP_TOL * (1.0 + v_p.abs().max(v_r.abs())) {
                sol.v_p = v_p;
                sol.v_r = v_r;
                sol.sweeps = sweep;
                return Ok(sol);
            }
        }
        Err(Error::NotConverged {
            sweeps: max_sweeps,
            last_change: change,
        })
    }

    fn active_raw(&self, x: f64) -> f64 {
        self.user.reward_raw(x) + self.beta * (x * self.v_p + (1.0 - x) * self.v_r)
    }

    /// One Bellman pass backward along an orbit with the current anchors.
    fn backward(&self, xs: &[f64]) -> f64 {
        let last = xs[xs.len() - 1];
        let mut v = self.active_raw(last).max(self.omega / (1.0 - self.beta));
        for &x in xs[..xs.len() - 1].iter().rev() {
            v = self.active_raw(x).max(self.omega + self.beta * v);
        }
        v
    }

    fn orbit_of(&self, x0: f64) -> Vec<f64> {
        let mut xs = Vec::with_capacity(self.orbit_len + 1);
        let mut x = x0;
        xs.push(x);
        for _ in 0..self.orbit_len {
            x = self.user.channel().q_raw(x);
            xs.push(x);
        }
        xs
    }

    pub fn v_p(&self) -> f64 {
        self.v_p
    }

    pub fn v_r(&self) -> f64 {
        self.v_r
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub(crate) fn active_value_raw(&self, pi: f64) -> f64 {
        self.active_raw(pi)
    }

    pub(crate) fn idle_value_raw(&self, pi: f64) -> f64 {
        let q = self.user.channel().q_raw(pi);
        self.omega + self.beta * self.backward(&self.orbit_of(q))
    }

    pub(crate) fn value_raw(&self, pi: f64) -> f64 {
        self.backward(&self.orbit_of(pi))
    }

    /// Value of transmitting now and acting optimally afterwards.
    pub fn active_value(&self, pi: Belief) -> f64 {
        self.active_value_raw(pi.get())
    }

    /// Value of idling now and acting optimally afterwards.
    pub fn idle_value(&self, pi: Belief) -> f64 {
        self.idle_value_raw(pi.get())
    }

    /// Optimal value.
    pub fn value(&self, pi: Belief) -> f64 {
        self.value_raw(pi.get())
    }
}

/// Optimal, active and idle values tabulated on a belief grid.
#[derive(Debug, Clone)]
pub struct ValueTable {
    solution: OracleSolution,
    grid: Vec<f64>,
    value: Vec<f64>,
    active: Vec<f64>,
    idle: Vec<f64>,
}

impl ValueTable {
    pub(crate) fn build(
        prob: &SubsidyProblem,
        grid_size: usize,
        max_sweeps: usize,
    ) -> Result<Self> {
        if grid_size < 101 {
            return Err(Error::GridTooSmall(grid_size));
        }
        let solution = OracleSolution::solve(prob, max_sweeps)?;
        let ch = prob.user().channel();
        let mut grid: Vec<f64> = (0..grid_size)
            .map(|i| i as f64 / (grid_size - 1) as f64)
            .collect();
        grid.extend([
            ch.p(),
            ch.r(),
            ch.steady_raw(),
            ch.q_raw(ch.p()),
            ch.q_raw(ch.r()),
        ]);
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        let active: Vec<f64> = grid.iter().map(|&x| solution.active_value_raw(x)).collect();
        let idle: Vec<f64> = grid.iter().map(|&x| solution.idle_value_raw(x)).collect();
        let value = active.iter().zip(&idle).map(|(a, i)| a.max(*i)).collect();
        Ok(ValueTable {
            solution,
            grid,
            value,
            active,
            idle,
        })
    }

    pub fn solution(&self) -> &OracleSolution {
        &self.solution
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.value
    }

    pub fn active_values(&self) -> &[f64] {
        &self.active
    }

    pub fn idle_values(&self) -> &[f64] {
        &self.idle
    }

    /// Largest violation of convexity over the grid (positive means
    /// nonconvex), measured by divided second differences.
    pub fn convexity_defect(&self) -> f64 {
        let g = &self.grid;
        let v = &self.value;
        let mut worst = f64::NEG_INFINITY;
        for i in 1..g.len() - 1 {
            let left = (v[i] - v[i - 1]) / (g[i] - g[i - 1]);
            let right = (v[i + 1] - v[i]) / (g[i + 1] - g[i]);
            worst = worst.max(left - right);
        }
        worst
    }

    /// Number of sign changes of active minus idle along the grid.
    pub fn sign_changes(&self) -> usize {
        let signs: Vec<bool> = self
            .active
            .iter()
            .zip(&self.idle)
            .map(|(a, i)| a - i > 1e-12)
            .collect();
        signs.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(p: f64, r: f64, beta: f64, omega: f64) -> SubsidyProblem {
        SubsidyProblem::new(
            UserModel::with_default_reward(p, r, 0.2).unwrap(),
            beta,
            omega,
        )
        .unwrap()
    }

    #[test]
    fn myopic_table() {
        let t = prob(0.8, 0.2, 0.0, 0.4).value_iteration(101, 10).unwrap();
        for (x, v) in t.grid().iter().zip(t.values()) {
            let expected = prob(0.8, 0.2, 0.0, 0.4).user().reward_raw(*x).max(0.4);
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn always_idle_table_is_constant() {
        let t = prob(0.8, 0.2, 0.6, 1.2)
            .value_iteration(101, 10_000)
            .unwrap();
        assert!(t.values().iter().all(|v| (v - 3.0).abs() < 1e-9));
    }

    #[test]
    fn table_is_convex_with_single_switch() {
        let t = prob(0.8, 0.2, 0.9, 0.6)
            .value_iteration(1001, 100_000)
            .unwrap();
        assert!(
            t.convexity_defect() < 1e-8,
            "defect {}",
            t.convexity_defect()
        );
        assert_eq!(t.sign_changes(), 1);
        assert!(matches!(
            prob(0.8, 0.2, 0.9, 0.6).value_iteration(50, 10),
            Err(Error::GridTooSmall(50))
        ));
    }

    #[test]
    fn always_active_matches_oracle_at_low_subsidy() {
        let pr = prob(0.8, 0.2, 0.9, -1e6);
        let sol = OracleSolution::solve(&pr, 100_000).unwrap();
        let direct = pr.always_active_value(Belief::new(0.2).unwrap());
        assert!((sol.v_r() - direct).abs() < 1e-6);
    }
}
