//! Exact horizontal-distance test for the render cap.
//!
//! `hypot` and naive squaring both round, so a point sitting on (or a few ulps
//! from) the cap circle could land on either side depending on the vehicle's
//! absolute position. The predicate below decides the sign of
//! `(ax-bx)² + (ay-by)² - r²` over the exact values of its f64 operands: a
//! floating-point filter settles almost every call, and the rest fall back to
//! error-free expansion arithmetic. Exact as long as no partial product
//! underflows (operands far above 1e-140 in magnitude, or exactly zero).

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Adds `b` to a nonoverlapping expansion, dropping zero components.
fn grow(e: &mut Vec<f64>, b: f64) {
    let mut q = b;
    let mut out = Vec::with_capacity(e.len() + 1);
    for &c in e.iter() {
        let (s, h) = two_sum(q, c);
        if h != 0.0 {
            out.push(h);
        }
        q = s;
    }
    if q != 0.0 {
        out.push(q);
    }
    *e = out;
}

/// Whether `a` lies within horizontal distance `r` of `b`, boundary included.
pub fn horizontal_within(a: [f64; 2], b: [f64; 2], r: f64) -> bool {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    let (d2, r2) = (dx * dx + dy * dy, r * r);
    if !(d2.is_finite() && r2.is_finite()) {
        return false;
    }
    let bound = 8.0 * f64::EPSILON * (d2 + r2);
    if d2 - r2 > bound {
        return false;
    }
    if r2 - d2 > bound {
        return true;
    }
    let mut e = Vec::with_capacity(16);
    for (p, q) in [(a[0], b[0]), (a[1], b[1])] {
        let (h, l) = two_sum(p, -q);
        for (x, y, k) in [(h, h, 1.0), (h, l, 2.0), (l, l, 1.0)] {
            let (hi, lo) = two_prod(x, y);
            grow(&mut e, k * hi);
            grow(&mut e, k * lo);
        }
    }
    let (hi, lo) = two_prod(r, r);
    grow(&mut e, -hi);
    grow(&mut e, -lo);
    e.last().map_or(true, |&top| top < 0.0)
}
