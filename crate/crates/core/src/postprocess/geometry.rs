use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

#[inline]
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Rotated rectangle; `angle` (degrees, in `[-90, 0)`) is the direction of
/// the side whose length is `width`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    pub center: Point,
    pub width: f64,
    pub height: f64,
    pub angle: f64,
}

impl RotatedRect {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Unit vectors along the width and height sides.
    pub fn axes(&self) -> (Point, Point) {
        let t = self.angle.to_radians();
        let (s, c) = t.sin_cos();
        (Point::new(c, s), Point::new(-s, c))
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> RotatedRect {
        RotatedRect {
            center: Point::new(self.center.x * factor, self.center.y * factor),
            width: self.width * factor,
            height: self.height * factor,
            angle: self.angle,
        }
    }

    /// Corners, clockwise on screen (y down), starting at the topmost corner
    /// (leftmost among equally high ones).
    pub fn vertices(&self) -> [Point; 4] {
        let (u, v) = self.axes();
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        let c = self.center;
        let mut pts = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(a, b)| {
            Point::new(
                c.x + a * hw * u.x + b * hh * v.x,
                c.y + a * hw * u.y + b * hh * v.y,
            )
        });
        // With y pointing down, increasing atan2 is clockwise on screen.
        pts.sort_by(|p, q| {
            let ap = (p.y - c.y).atan2(p.x - c.x);
            let aq = (q.y - c.y).atan2(q.x - c.x);
            ap.total_cmp(&aq)
        });
        let eps = 1e-9 * (1.0 + self.width.abs() + self.height.abs());
        let start = (0..4)
            .min_by(|&i, &j| {
                let (p, q) = (pts[i], pts[j]);
                if (p.y - q.y).abs() <= eps {
                    p.x.total_cmp(&q.x)
                } else {
                    p.y.total_cmp(&q.y)
                }
            })
            .unwrap();
        pts.rotate_left(start);
        pts
    }

    /// Whether `p` lies inside, allowing `slack` outside each side.
    pub fn contains(&self, p: Point, slack: f64) -> bool {
        let (u, v) = self.axes();
        let d = p.sub(self.center);
        d.dot(u).abs() <= self.width / 2.0 + slack && d.dot(v).abs() <= self.height / 2.0 + slack
    }
}

/// Convex hull (counter-clockwise in a y-up frame, no collinear points),
/// Andrew's monotone chain.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn normalized(center: Point, u: Point, width: f64, height: f64) -> RotatedRect {
    let mut angle = u.y.atan2(u.x).to_degrees();
    while angle >= 90.0 {
        angle -= 180.0;
    }
    while angle < -90.0 {
        angle += 180.0;
    }
    let (angle, width, height) = if angle >= 0.0 {
        (angle - 90.0, height, width)
    } else {
        (angle, width, height)
    };
    RotatedRect {
        center,
        width,
        height,
        angle,
    }
}

/// Minimum-area enclosing rectangle by rotating calipers over the convex hull.
pub fn min_area_rect(points: &[Point]) -> Result<RotatedRect> {
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "min_area_rect needs at least one point".into(),
        ));
    }
    let hull = convex_hull(points);
    let n = hull.len();
    if n == 1 {
        return Ok(normalized(hull[0], Point::new(1.0, 0.0), 0.0, 0.0));
    }
    let next = |i: usize| (i + 1) % n;
    let mut best: Option<(f64, RotatedRect)> = None;
    // Calipers: farthest along the edge (right), farthest from the edge
    // (top), farthest against the edge (left). Each only moves forward.
    let (mut right, mut top, mut left) = (1 % n, 1 % n, 1 % n);
    for i in 0..n {
        let e = hull[next(i)].sub(hull[i]);
        let len = e.dot(e).sqrt();
        let u = Point::new(e.x / len, e.y / len);
        let v = Point::new(-u.y, u.x);
        if i == 0 {
            right = next(i);
        }
        for _ in 0..n {
            if hull[next(right)].sub(hull[right]).dot(u) > 0.0 {
                right = next(right);
            } else {
                break;
            }
        }
        if i == 0 {
            top = right;
        }
        for _ in 0..n {
            if hull[next(top)].sub(hull[top]).dot(v) > 0.0 {
                top = next(top);
            } else {
                break;
            }
        }
        if i == 0 {
            left = top;
        }
        for _ in 0..n {
            if hull[next(left)].sub(hull[left]).dot(u) < 0.0 {
                left = next(left);
            } else {
                break;
            }
        }
        let a_max = hull[right].dot(u);
        let a_min = hull[left].dot(u);
        let b0 = hull[i].dot(v);
        let b1 = hull[top].dot(v);
        let width = a_max - a_min;
        let height = b1 - b0;
        let area = width * height;
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let ca = (a_max + a_min) / 2.0;
            let cb = (b0 + b1) / 2.0;
            let center = Point::new(ca * u.x + cb * v.x, ca * u.y + cb * v.y);
            best = Some((area, normalized(center, u, width, height)));
        }
    }
    Ok(best.expect("hull has at least two points").1)
}
