//! Axis-aligned boxes in pixel coordinates, origin at the top-left corner.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    /// Builds a box from left/top/right/bottom corners.
    pub fn from_corners(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self::new(left, top, right - left, bottom - top)
    }

    pub fn right(&self) -> f64 {
        self.x + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.height
    }

    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Grows each side by `perc` of the box extent along that axis; the
    /// center is preserved. Negative values shrink the box.
    pub fn expanded(&self, perc: f64) -> BBox {
        BBox::new(
            self.x - perc * self.width,
            self.y - perc * self.height,
            self.width * (1.0 + 2.0 * perc),
            self.height * (1.0 + 2.0 * perc),
        )
    }

    /// Smallest box containing every point, or `None` for an empty input.
    pub fn enclosing<I: IntoIterator<Item = (f64, f64)>>(points: I) -> Option<BBox> {
        let mut iter = points.into_iter();
        let (x0, y0) = iter.next()?;
        let (mut xmin, mut ymin, mut xmax, mut ymax) = (x0, y0, x0, y0);
        for (x, y) in iter {
            xmin = xmin.min(x);
            ymin = ymin.min(y);
            xmax = xmax.max(x);
            ymax = ymax.max(y);
        }
        Some(BBox::new(xmin, ymin, extent(xmin, xmax), extent(ymin, ymax)))
    }
}

/// A length `w` with `lo + w == hi` when one exists, otherwise the smallest
/// `w` with `lo + w >= hi`, so the stored box still covers `hi`.
fn extent(lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    if lo + w == hi {
        return w;
    }
    if lo + w.next_down() == hi {
        return w.next_down();
    }
    let mut up = w;
    while lo + up < hi {
        up = up.next_up();
    }
    up
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enclosing_covers_extremes_exactly() {
        let pts = [(-70.60511698648234, 0.0), (98.2375660587673, 0.0), (0.0, -99.55679716891152), (0.0, 96.05697099589496)];
        let b = BBox::enclosing(pts).unwrap();
        // No width reaches these maxima exactly from the minima; the box
        // covers them with the smallest possible overshoot instead.
        assert!(b.right() >= 98.2375660587673);
        assert!(b.x + b.width.next_down() < 98.2375660587673);
        assert!(b.bottom() >= 96.05697099589496);
        assert!(b.y + b.height.next_down() < 96.05697099589496);
    }

    #[test]
    fn iou_of_half_overlap() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 10.0, 10.0);
        assert_eq!(a.intersection_area(&b), 50.0);
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_do_not_intersect() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(10.0, 0.0, 10.0, 10.0);
        assert_eq!(a.intersection_area(&b), 0.0);
    }

    #[test]
    fn expand_worked_example() {
        let b = BBox::new(10.0, 10.0, 20.0, 40.0).expanded(0.2);
        assert_eq!(b, BBox::new(6.0, 2.0, 28.0, 56.0));
    }

    #[test]
    fn enclosing_triangle() {
        let b = BBox::enclosing([(0.0, 0.0), (10.0, 0.0), (5.0, 5.0)]).unwrap();
        assert_eq!(b, BBox::new(0.0, 0.0, 10.0, 5.0));
        assert!(BBox::enclosing(std::iter::empty()).is_none());
    }
}
