// SPDX-License-Identifier: Apache-2.0

//! Random-walk mobility: pick a direction, a destination along it inside the
//! area and a speed, walk there, repeat.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::topology::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Walker {
    pub position: Point,
    /// Unit vector towards `destination`.
    pub heading: Point,
    pub speed: f64,
    pub destination: Point,
}

impl Walker {
    pub fn velocity(&self) -> Point {
        Point::new(self.heading.x * self.speed, self.heading.y * self.speed)
    }
}

/// Folds a coordinate back into `[0, size]`.
fn reflect1(v: f64, size: f64) -> f64 {
    if size <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * size;
    let m = v.rem_euclid(period);
    if m > size {
        period - m
    } else {
        m
    }
}

pub fn reflect(p: Point, area: [f64; 2]) -> Point {
    Point::new(reflect1(p.x, area[0]), reflect1(p.y, area[1]))
}

/// Distance from `p` along unit vector `d` to the area boundary.
fn ray_to_boundary(p: Point, d: Point, area: [f64; 2]) -> f64 {
    let mut t = f64::INFINITY;
    if d.x > 0.0 {
        t = t.min((area[0] - p.x) / d.x);
    } else if d.x < 0.0 {
        t = t.min(-p.x / d.x);
    }
    if d.y > 0.0 {
        t = t.min((area[1] - p.y) / d.y);
    } else if d.y < 0.0 {
        t = t.min(-p.y / d.y);
    }
    t.max(0.0)
}

/// Draws a fresh leg from `position`.
pub fn new_leg<R: Rng + ?Sized>(position: Point, area: [f64; 2], speed: [f64; 2], rng: &mut R) -> Walker {
    let angle = rng.gen_range(0.0..TAU);
    let heading = Point::new(angle.cos(), angle.sin());
    let reach = ray_to_boundary(position, heading, area);
    let dist = if reach > 0.0 { rng.gen_range(0.0..=reach) } else { 0.0 };
    let destination = reflect(Point::new(position.x + heading.x * dist, position.y + heading.y * dist), area);
    let v = if speed[0] < speed[1] { rng.gen_range(speed[0]..=speed[1]) } else { speed[0] };
    Walker { position, heading, speed: v, destination }
}

/// Advances the walker by `dt` seconds, starting a new leg on arrival.
pub fn random_walk_step<R: Rng + ?Sized>(w: &mut Walker, dt: f64, area: [f64; 2], speed: [f64; 2], rng: &mut R) {
    let mut left = dt;
    // a handful of legs at most; zero-length legs are possible at corners
    for _ in 0..8 {
        let remaining = w.position.distance(&w.destination);
        let step = w.speed * left;
        if step < remaining {
            w.position = reflect(
                Point::new(w.position.x + w.heading.x * step, w.position.y + w.heading.y * step),
                area,
            );
            return;
        }
        if w.speed > 0.0 {
            left -= remaining / w.speed;
        }
        *w = new_leg(w.destination, area, speed, rng);
        if left <= 0.0 {
            return;
        }
    }
}
