use super::{polygon_area_signed, BBox3D, Rect2D, Vec2};

/// Intersection over union of two image rectangles.
pub fn iou_rect(a: &Rect2D, b: &Rect2D) -> f64 {
    let w = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let h = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = w * h;
    if inter <= 0.0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Unsigned area of a simple polygon.
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    polygon_area_signed(poly).abs()
}

/// Sutherland-Hodgman clipping of `subject` against the convex, counter-clockwise `clip`.
pub fn clip_convex_polygon(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut output: Vec<Vec2> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let edge = b - a;
        let side = |p: &Vec2| edge.x * (p.y - a.y) - edge.y * (p.x - a.x);
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let sc = side(&cur);
            let sp = side(&prev);
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: Vec2, q: Vec2, sp: f64, sq: f64) -> Vec2 {
    let t = sp / (sp - sq);
    p + (q - p) * t
}

/// Exact IoU of two yaw-only boxes: footprint intersection times vertical overlap.
pub fn iou_box3d(a: &BBox3D, b: &BBox3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let dy = (a.max_y().min(b.max_y()) - a.min_y().max(b.min_y())).max(0.0);
    if dy <= 0.0 {
        return 0.0;
    }
    let fa = a.footprint();
    let fb = b.footprint();
    let inter_poly = clip_convex_polygon(&fa, &fb);
    if inter_poly.len() < 3 {
        return 0.0;
    }
    let inter = polygon_area(&inter_poly) * dy;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
