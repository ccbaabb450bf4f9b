//! Reference values computed without the level-set solver.

use safegil::envmodels::{Env, Model};

/// Closed form for `x' = u + d`, `|u| <= ubar`,
/// `|d| <= dbar`, `l(x) = x`, over a finite horizon.
pub fn analytic_1d_value(x: f64, ubar: f64, dbar: f64, horizon: f64) -> f64 {
    if ubar >= dbar {
        x
    } else {
        x - (dbar - ubar) * horizon
    }
}

pub const MAX_DEPTH: usize = 8;

/// Discrete game `V_k(x) = min(l(x), max_u min_d V_{k-1}(step(x, u, d)))`
/// with `V_0 = l`, inputs held for `dt` and drawn from the given finite
/// sets. Returns `None` for depths above [`MAX_DEPTH`].
pub fn exhaustive_game_value(
    model: &Model,
    env: &Env,
    x0: &[f64],
    depth: usize,
    dt: f64,
    controls: &[f64],
    disturbances: &[f64],
) -> Option<f64> {
    if depth > MAX_DEPTH {
        return None;
    }
    let game = Game {
        model,
        env,
        dt,
        controls,
        disturbances,
    };
    Some(game.value(x0, depth, f64::NEG_INFINITY, f64::INFINITY))
}

struct Game<'a> {
    model: &'a Model,
    env: &'a Env,
    dt: f64,
    controls: &'a [f64],
    disturbances: &'a [f64],
}

impl Game<'_> {
    /// Alpha-beta search; exact whenever the result lies inside
    /// `(alpha, beta)`.
    fn value(&self, x: &[f64], depth: usize, mut alpha: f64, beta: f64) -> f64 {
        let l = self.env.target(x);
        if depth == 0 || l <= 0.0 || l <= alpha {
            return l;
        }
        let beta = beta.min(l);
        let mut best = f64::NEG_INFINITY;
        for &u in self.controls {
            let mut worst = f64::INFINITY;
            for &d in self.disturbances {
                let next = self.model.step_rk4(x, u, d, self.dt).expect("finite state");
                worst = worst.min(self.value(&next, depth - 1, alpha, beta.min(worst)));
                if worst <= alpha {
                    break;
                }
            }
            best = best.max(worst);
            alpha = alpha.max(best);
            if best >= beta {
                break;
            }
        }
        l.min(best)
    }
}

/// `{-b, 0, b}`.
pub fn three_levels(b: f64) -> Vec<f64> {
    vec![-b, 0.0, b]
}
