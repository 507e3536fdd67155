//! 2D polylines in pixel coordinates `[row, col]`.

/// A polyline in fractional pixel coordinates, `[row, col]` per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

impl Polyline {
    pub fn closed(points: Vec<[f64; 2]>) -> Self {
        Polyline {
            points,
            closed: true,
        }
    }

    fn segments(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.points.len();
        let count = if self.closed { n } else { n.saturating_sub(1) };
        (0..count).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Arc length in pixels.
    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| dist2(&a, &b)).sum()
    }

    /// Shoelace area in square pixels; sign follows the traversal direction.
    /// Open polylines are implicitly closed.
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            acc += a[1] * b[0] - b[1] * a[0];
        }
        acc / 2.0
    }

    /// Points spaced at most `max_step` apart along the curve. The closing
    /// vertex of a closed polyline is not repeated.
    pub fn resample(&self, max_step: f64) -> Vec<[f64; 2]> {
        assert!(max_step > 0.0);
        let mut out = Vec::new();
        for (a, b) in self.segments() {
            let len = dist2(&a, &b);
            let pieces = (len / max_step).ceil().max(1.0) as usize;
            for k in 0..pieces {
                let t = k as f64 / pieces as f64;
                out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        if !self.closed {
            if let Some(last) = self.points.last() {
                out.push(*last);
            }
        }
        if out.is_empty() {
            out.extend(self.points.iter().copied());
        }
        out
    }
}

#[inline]
pub fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
