//! Convex hull and minimum-area enclosing rectangle (rotating calipers).

use super::{GeoError, LocalXY};

/// Rectangle given by its corners in counter-clockwise order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub corners: [LocalXY; 4],
}

impl OrientedRect {
    pub fn area(&self) -> f64 {
        let [a, b, _, d] = self.corners;
        a.distance(b) * a.distance(d)
    }

    pub fn centroid(&self) -> LocalXY {
        let s = self.corners.iter().fold(LocalXY::ORIGIN, |acc, &p| acc.add(p));
        s.scale(0.25)
    }

    /// Corners labelled by compass position: NW is the corner furthest in the
    /// north-west direction from the centroid, the rest follow clockwise.
    pub fn compass_corners(&self) -> [LocalXY; 4] {
        let c = self.centroid();
        let nw = (0..4)
            .max_by(|&i, &j| {
                let score = |k: usize| {
                    let d = self.corners[k].sub(c);
                    d.y - d.x
                };
                score(i).total_cmp(&score(j)).then(j.cmp(&i))
            })
            .unwrap_or(0);
        // Counter-clockwise storage, so clockwise means stepping backwards.
        [0, 1, 2, 3].map(|step| self.corners[(nw + 4 - step) % 4])
    }
}

/// Andrew's monotone chain. Returns the hull counter-clockwise without
/// collinear points.
pub fn convex_hull(points: &[LocalXY]) -> Vec<LocalXY> {
    let mut pts: Vec<LocalXY> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<LocalXY> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &LocalXY>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if b.sub(a).cross(p.sub(a)) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area rectangle enclosing `points`, found by rotating calipers
/// over the convex hull.
pub fn min_area_rect(points: &[LocalXY]) -> Result<OrientedRect, GeoError> {
    let hull = convex_hull(points);
    let n = hull.len();
    if n < 3 {
        return Err(GeoError::DegenerateBoundary("points are collinear".into()));
    }
    let span = hull.iter().map(|p| p.distance(hull[0])).fold(0.0, f64::max);
    let next = |i: usize| (i + 1) % n;

    let mut best: Option<(f64, OrientedRect)> = None;
    // Caliper indices: `far` maximises height above the edge, `right` and
    // `left` extremise the projection along it. All advance monotonically.
    let (mut far, mut right, mut left) = (1usize, 1usize, 0usize);
    for i in 0..n {
        let base = hull[i];
        let edge = hull[next(i)].sub(base);
        let len = edge.dot(edge).sqrt();
        let u = edge.scale(1.0 / len);
        let normal = LocalXY::new(-u.y, u.x);
        let along = |k: usize| hull[k].sub(base).dot(u);
        let height = |k: usize| hull[k].sub(base).dot(normal);

        if i == 0 {
            right = next(i);
        }
        for _ in 0..n {
            if along(next(right)) > along(right) {
                right = next(right);
            } else {
                break;
            }
        }
        if i == 0 {
            far = right;
        }
        for _ in 0..n {
            if height(next(far)) > height(far) {
                far = next(far);
            } else {
                break;
            }
        }
        if i == 0 {
            left = far;
        }
        for _ in 0..n {
            if along(next(left)) < along(left) {
                left = next(left);
            } else {
                break;
            }
        }

        let (lo, hi, h) = (along(left), along(right), height(far));
        let area = (hi - lo) * h;
        if best.as_ref().map_or(true, |(a, _)| area < *a) {
            let p0 = base.add(u.scale(lo));
            let p1 = base.add(u.scale(hi));
            let rect = OrientedRect {
                corners: [p0, p1, p1.add(normal.scale(h)), p0.add(normal.scale(h))],
            };
            best = Some((area, rect));
        }
    }

    let (area, rect) = best.expect("hull has at least three edges");
    if !(area > 1e-12 * span * span) {
        return Err(GeoError::DegenerateBoundary("enclosing rectangle has zero area".into()));
    }
    Ok(rect)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Every hull-edge orientation, every point projected: the textbook
    /// O(n²) search the calipers must agree with.
    fn brute_force_min_area(points: &[LocalXY]) -> f64 {
        let hull = convex_hull(points);
        let mut best = f64::INFINITY;
        for i in 0..hull.len() {
            let e = hull[(i + 1) % hull.len()].sub(hull[i]);
            let u = e.scale(1.0 / e.dot(e).sqrt());
            let v = LocalXY::new(-u.y, u.x);
            let (mut a0, mut a1, mut b0, mut b1) =
                (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for p in points {
                a0 = a0.min(p.dot(u));
                a1 = a1.max(p.dot(u));
                b0 = b0.min(p.dot(v));
                b1 = b1.max(p.dot(v));
            }
            best = best.min((a1 - a0) * (b1 - b0));
        }
        best
    }

    #[test]
    fn hull_drops_interior_and_collinear() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0), (1.0, 1.0)]
            .map(|(x, y)| LocalXY::new(x, y));
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!(!hull.contains(&LocalXY::new(1.0, 1.0)));
        assert!(!hull.contains(&LocalXY::new(1.0, 0.0)));
    }

    #[test]
    fn collinear_is_degenerate() {
        let pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)].map(|(x, y)| LocalXY::new(x, y));
        assert!(matches!(min_area_rect(&pts), Err(GeoError::DegenerateBoundary(_))));
    }

    #[test]
    fn rotated_rectangle_recovered() {
        let theta = 30f64.to_radians();
        let (c, s) = (theta.cos(), theta.sin());
        let rect: Vec<LocalXY> = [(-30.0, -12.0), (30.0, -12.0), (30.0, 12.0), (-30.0, 12.0)]
            .iter()
            .map(|&(x, y)| LocalXY::new(x * c - y * s + 5.0, x * s + y * c - 3.0))
            .collect();
        let found = min_area_rect(&rect).unwrap();
        assert!((found.area() - 60.0 * 24.0).abs() < 1e-6);
        assert!((found.area() - brute_force_min_area(&rect)).abs() < 1e-6);
        for v in &rect {
            assert!(found.corners.iter().any(|c| c.distance(*v) < 1e-6));
        }
    }

    #[test]
    fn compass_labels_for_rotated_rectangle() {
        let theta = 30f64.to_radians();
        let (c, s) = (theta.cos(), theta.sin());
        let rot = |x: f64, y: f64| LocalXY::new(x * c - y * s, x * s + y * c);
        let rect = [rot(-30.0, -12.0), rot(30.0, -12.0), rot(30.0, 12.0), rot(-30.0, 12.0)];
        let [nw, ne, se, sw] = min_area_rect(&rect).unwrap().compass_corners();
        // Rotating 30° counter-clockwise moves the top-left corner furthest
        // towards the north-west.
        assert!(nw.distance(rect[3]) < 1e-6);
        assert!(ne.distance(rect[2]) < 1e-6);
        assert!(se.distance(rect[1]) < 1e-6);
        assert!(sw.distance(rect[0]) < 1e-6);
    }

    #[test]
    fn calipers_match_brute_force_on_random_polygons() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(3..40);
            let pts: Vec<LocalXY> = (0..n)
                .map(|_| LocalXY::new(rng.gen_range(-50.0..50.0), rng.gen_range(-20.0..20.0)))
                .collect();
            let Ok(rect) = min_area_rect(&pts) else { continue };
            let oracle = brute_force_min_area(&pts);
            assert!((rect.area() - oracle).abs() <= 1e-7 * oracle.max(1.0), "{} vs {oracle}", rect.area());
        }
    }
}
