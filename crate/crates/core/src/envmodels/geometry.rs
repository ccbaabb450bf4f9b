use super::{wrap_angle, State};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    pub fn signed_distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) - self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    /// Distance to the boundary, positive inside.
    pub fn inner_distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.lo[0])
            .min(self.hi[0] - p[0])
            .min(p[1] - self.lo[1])
            .min(self.hi[1] - p[1])
    }

    fn closest_point(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0].clamp(self.lo[0], self.hi[0]),
            p[1].clamp(self.lo[1], self.hi[1]),
        ]
    }
}

/// Failure set and task geometry. The failure set is `{x : l(x) <= 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// Planar workspace with circular obstacles and a goal disk. Leaving the
    /// workspace counts as failure.
    Obstacles {
        workspace: Rect,
        obstacles: Vec<Circle>,
        goal: Circle,
    },
    /// Runway of half-width `half_width` along the downtrack axis; the task
    /// ends at `length`.
    Runway { half_width: f64, length: f64 },
    /// `l(x) = x` on the line; the goal is `x >= goal`.
    HalfLine { goal: f64 },
}

impl Geometry {
    pub fn target(&self, x: &[f64]) -> f64 {
        match self {
            Geometry::Obstacles {
                workspace,
                obstacles,
                ..
            } => {
                let p = [x[0], x[1]];
                obstacles
                    .iter()
                    .map(|c| c.signed_distance(p))
                    .fold(workspace.inner_distance(p), f64::min)
            }
            Geometry::Runway { half_width, .. } => half_width - x[0].abs(),
            Geometry::HalfLine { .. } => x[0],
        }
    }

    pub fn reached_goal(&self, x: &[f64]) -> bool {
        match self {
            Geometry::Obstacles { goal, .. } => goal.signed_distance([x[0], x[1]]) <= 0.0,
            Geometry::Runway { length, .. } => x[1] >= *length,
            Geometry::HalfLine { goal } => x[0] >= *goal,
        }
    }

    pub fn goal_position(&self) -> Option<[f64; 2]> {
        match self {
            Geometry::Obstacles { goal, .. } => Some(goal.center),
            _ => None,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        match self {
            Geometry::Obstacles {
                workspace,
                obstacles,
                goal,
            } => {
                if !(workspace.lo[0] < workspace.hi[0] && workspace.lo[1] < workspace.hi[1]) {
                    return Err("empty workspace".into());
                }
                if obstacles.iter().any(|c| c.radius <= 0.0) || goal.radius <= 0.0 {
                    return Err("radii must be positive".into());
                }
                if self.target(&goal.center) <= goal.radius {
                    return Err("goal disk intersects the failure set".into());
                }
                Ok(())
            }
            Geometry::Runway { half_width, length } => {
                if *half_width > 0.0 && *length > 0.0 {
                    Ok(())
                } else {
                    Err("runway dimensions must be positive".into())
                }
            }
            Geometry::HalfLine { goal } => {
                if *goal > 0.0 {
                    Ok(())
                } else {
                    Err("goal must lie in the safe half-line".into())
                }
            }
        }
    }
}

/// Where episodes start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartDistribution {
    /// Position uniform in `region`; heading aims at the goal, perturbed
    /// uniformly by up to `heading_spread`.
    Box {
        region: Rect,
        heading_spread: f64,
    },
    /// `p_x` and heading uniform, `p_y = 0`.
    Runway {
        px: [f64; 2],
        theta: [f64; 2],
    },
    Interval {
        lo: f64,
        hi: f64,
    },
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl StartDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, geometry: &Geometry, rng: &mut R) -> State {
        match self {
            StartDistribution::Box {
                region,
                heading_spread,
            } => {
                let px = uniform(rng, region.lo[0], region.hi[0]);
                let py = uniform(rng, region.lo[1], region.hi[1]);
                let aim = geometry
                    .goal_position()
                    .map(|g| (g[1] - py).atan2(g[0] - px))
                    .unwrap_or(0.0);
                let th = aim + uniform(rng, -heading_spread, *heading_spread);
                State::from_slice(&[px, py, wrap_angle(th)])
            }
            StartDistribution::Runway { px, theta } => {
                let x = uniform(rng, px[0], px[1]);
                let th = uniform(rng, theta[0], theta[1]);
                State::from_slice(&[x, 0.0, th])
            }
            StartDistribution::Interval { lo, hi } => State::from_slice(&[uniform(rng, *lo, *hi)]),
        }
    }

    pub(crate) fn validate(&self, geometry: &Geometry) -> Result<(), String> {
        match (self, geometry) {
            (
                StartDistribution::Box { region, .. },
                Geometry::Obstacles {
                    workspace,
                    obstacles,
                    ..
                },
            ) => {
                let inside = region.lo[0] > workspace.lo[0]
                    && region.hi[0] < workspace.hi[0]
                    && region.lo[1] > workspace.lo[1]
                    && region.hi[1] < workspace.hi[1];
                if !inside {
                    return Err("start region leaves the workspace".into());
                }
                for c in obstacles {
                    if c.signed_distance(region.closest_point(c.center)) <= 0.0 {
                        return Err("start region intersects an obstacle".into());
                    }
                }
                Ok(())
            }
            (StartDistribution::Runway { px, .. }, Geometry::Runway { half_width, .. }) => {
                if px[0].abs().max(px[1].abs()) < *half_width {
                    Ok(())
                } else {
                    Err("start crosstrack range leaves the runway".into())
                }
            }
            (StartDistribution::Interval { lo, hi }, Geometry::HalfLine { .. }) => {
                if *lo > 0.0 && lo <= hi {
                    Ok(())
                } else {
                    Err("start interval must lie in the safe half-line".into())
                }
            }
            _ => Err("start distribution does not match the geometry kind".into()),
        }
    }
}
