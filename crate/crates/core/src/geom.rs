use serde::{Deserialize, Serialize};

/// Axis-aligned text box in integer pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl TextBox {
    pub const fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self { x, y, w, h }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width as i64, height as i64)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0 && self.h > 0
    }

    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    pub fn area(&self) -> i64 {
        self.w.max(0) * self.h.max(0)
    }

    pub fn center(&self) -> (f32, f32) {
        (self.x as f32 + self.w as f32 / 2.0, self.y as f32 + self.h as f32 / 2.0)
    }

    /// True when the box is non-degenerate and lies fully inside a `width`×`height` canvas.
    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.is_valid() && self.x >= 0 && self.y >= 0 && self.right() <= width as i64 && self.bottom() <= height as i64
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn expand(&self, by: i64) -> TextBox {
        TextBox::new(self.x - by, self.y - by, self.w + 2 * by, self.h + 2 * by)
    }

    /// Intersection with the canvas; `None` if nothing remains.
    pub fn clip(&self, width: usize, height: usize) -> Option<TextBox> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = self.right().min(width as i64);
        let y1 = self.bottom().min(height as i64);
        (x1 > x0 && y1 > y0).then(|| TextBox::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn intersects(&self, other: &TextBox) -> bool {
        self.x < other.right() && other.x < self.right() && self.y < other.bottom() && other.y < self.bottom()
    }

    pub fn union(&self, other: &TextBox) -> TextBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.right().max(other.right());
        let y1 = self.bottom().max(other.bottom());
        TextBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Chebyshev distance from pixel (`x`, `y`) to the box; 0 inside.
    pub fn distance_outside(&self, x: i64, y: i64) -> i64 {
        let dx = (self.x - x).max(x - (self.right() - 1)).max(0);
        let dy = (self.y - y).max(y - (self.bottom() - 1)).max(0);
        dx.max(dy)
    }

    /// Reading order: top-to-bottom, then left-to-right.
    pub fn reading_order(a: &TextBox, b: &TextBox) -> std::cmp::Ordering {
        (a.y, a.x, a.h, a.w).cmp(&(b.y, b.x, b.h, b.w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_and_fit() {
        let b = TextBox::new(-3, 2, 10, 4);
        assert!(!b.fits_in(8, 8));
        let c = b.clip(8, 8).unwrap();
        assert_eq!(c, TextBox::new(0, 2, 7, 4));
        assert!(c.fits_in(8, 8));
        assert!(TextBox::new(9, 9, 2, 2).clip(8, 8).is_none());
    }

    #[test]
    fn distance_outside_is_chebyshev() {
        let b = TextBox::new(2, 2, 3, 3);
        assert_eq!(b.distance_outside(3, 3), 0);
        assert_eq!(b.distance_outside(4, 4), 0);
        assert_eq!(b.distance_outside(5, 4), 1);
        assert_eq!(b.distance_outside(0, 7), 3);
    }

    #[test]
    fn intersects_excludes_touching_edges() {
        let a = TextBox::new(0, 0, 4, 4);
        assert!(!a.intersects(&TextBox::new(4, 0, 2, 2)));
        assert!(a.intersects(&TextBox::new(3, 3, 2, 2)));
    }
}
