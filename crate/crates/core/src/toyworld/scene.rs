use rand::Rng as _;

use super::{render_from_labels, ClassSet, LabeledImage, SceneSpec};
use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMap, Mask};
use crate::rng::{mix, rng_for, stream, Rng};

const PLACEMENT_TRIES: usize = 200;

/// A filled primitive in pixel coordinates. A pixel belongs to the shape when
/// its center `(col + 0.5, row + 0.5)` does.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Triangle { pts: [(f64, f64); 3] },
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Ellipse { cx, cy, rx, ry } => {
                let dx = (x - cx) / rx;
                let dy = (y - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
            Shape::Triangle { pts } => {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
                let e0 = edge(pts[0], pts[1]);
                let e1 = edge(pts[1], pts[2]);
                let e2 = edge(pts[2], pts[0]);
                (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
            }
        }
    }

    /// Pixel bounding box `(row0, col0, row1, col1)`, exclusive end, clipped.
    pub fn pixel_bounds(&self, height: usize, width: usize) -> (usize, usize, usize, usize) {
        let (x0, y0, x1, y1) = match *self {
            Shape::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
            Shape::Ellipse { cx, cy, rx, ry } => (cx - rx, cy - ry, cx + rx, cy + ry),
            Shape::Triangle { pts } => {
                let xs = pts.map(|p| p.0);
                let ys = pts.map(|p| p.1);
                (
                    xs.iter().cloned().fold(f64::INFINITY, f64::min),
                    ys.iter().cloned().fold(f64::INFINITY, f64::min),
                    xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            }
        };
        let clip = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi);
        (
            clip(y0.floor(), height),
            clip(x0.floor(), width),
            clip(y1.ceil() + 1.0, height),
            clip(x1.ceil() + 1.0, width),
        )
    }

    /// Visit every pixel covered by the shape.
    pub fn for_each_pixel(&self, height: usize, width: usize, mut f: impl FnMut(usize, usize)) {
        let (r0, c0, r1, c1) = self.pixel_bounds(height, width);
        for row in r0..r1 {
            for col in c0..c1 {
                if self.contains(col as f64 + 0.5, row as f64 + 0.5) {
                    f(row, col);
                }
            }
        }
    }

    pub fn area(&self, height: usize, width: usize) -> usize {
        let mut n = 0;
        self.for_each_pixel(height, width, |_, _| n += 1);
        n
    }

    /// Random shape whose extent lies inside the image.
    fn random(rng: &mut Rng, height: usize, width: usize, min_size: f64, max_size: f64) -> Shape {
        let w = rng.gen_range(min_size..=max_size);
        let h = rng.gen_range(min_size..=max_size);
        let x0 = rng.gen_range(0.0..=(width as f64 - w));
        let y0 = rng.gen_range(0.0..=(height as f64 - h));
        match rng.gen_range(0..3) {
            0 => Shape::Rect {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
            },
            1 => Shape::Ellipse {
                cx: x0 + w / 2.0,
                cy: y0 + h / 2.0,
                rx: w / 2.0,
                ry: h / 2.0,
            },
            _ => {
                // apex on the top edge, base on the bottom edge
                let apex = x0 + rng.gen_range(0.0..=w);
                Shape::Triangle {
                    pts: [(apex, y0), (x0 + w, y0 + h), (x0, y0 + h)],
                }
            }
        }
    }
}

/// Generate an in-distribution scene: background plus `n_objects` shapes.
pub fn generate_scene(
    seed: u64,
    classes: &ClassSet,
    spec: &SceneSpec,
    n_objects: usize,
) -> Result<LabeledImage> {
    spec.validate()?;
    classes.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = rng_for(seed, stream::SCENE, 0);
    let mut labels: LabelMap = Grid::filled(h, w, classes.background_id);
    let foreground: Vec<u8> = classes
        .in_dist_ids
        .iter()
        .copied()
        .filter(|&id| id != classes.background_id)
        .collect();
    let short = h.min(w) as f64;
    let (min_size, max_size) = (0.12 * short, 0.45 * short);
    let mut placed = 0;
    while placed < n_objects {
        let shape = Shape::random(&mut rng, h, w, min_size, max_size);
        let id = if foreground.is_empty() {
            classes.background_id
        } else {
            foreground[rng.gen_range(0..foreground.len())]
        };
        // thin triangles can rasterize to almost nothing
        if shape.area(h, w) < 16 {
            continue;
        }
        shape.for_each_pixel(h, w, |r, c| labels.set(r, c, id));
        placed += 1;
    }
    let render_seed = mix(&[seed, stream::RENDER_PHASE]);
    let rgb = render_from_labels(&labels, classes, render_seed, spec.noise_level)?;
    Ok(LabeledImage {
        id: format!("{seed:016x}"),
        rgb,
        ood_mask: Grid::filled(h, w, false),
        misclass_mask: Grid::filled(h, w, false),
        labels,
        pred_labels: None,
        pred_probs: None,
        render_seed,
        noise_level: spec.noise_level,
    })
}

/// The shapes and class ids `inject_ood` would place for these arguments.
/// Shapes never overlap OoD pixels already present in `occupied`.
pub fn place_ood_shapes(
    occupied: &Mask,
    classes: &ClassSet,
    seed: u64,
    n_ood: usize,
) -> Result<Vec<(Shape, u8)>> {
    if n_ood == 0 {
        return Err(Error::invalid("n_ood must be at least 1"));
    }
    if classes.ood_ids.is_empty() {
        return Err(Error::invalid("class set has no out-of-distribution ids"));
    }
    let (h, w) = (occupied.height, occupied.width);
    let mut taken = occupied.clone();
    let mut rng = rng_for(seed, stream::OOD, 0);
    let short = h.min(w) as f64;
    let (min_size, max_size) = (0.12 * short, 0.28 * short);
    let mut out = Vec::with_capacity(n_ood);
    for _ in 0..n_ood {
        let id = classes.ood_ids[rng.gen_range(0..classes.ood_ids.len())];
        let mut accepted = None;
        for _ in 0..PLACEMENT_TRIES {
            let shape = Shape::random(&mut rng, h, w, min_size, max_size);
            let mut area = 0;
            let mut clash = false;
            shape.for_each_pixel(h, w, |r, c| {
                area += 1;
                clash |= *taken.get(r, c);
            });
            if area >= 16 && !clash {
                accepted = Some(shape);
                break;
            }
        }
        let shape = accepted.ok_or(Error::Placement {
            tries: PLACEMENT_TRIES,
        })?;
        shape.for_each_pixel(h, w, |r, c| taken.set(r, c, true));
        out.push((shape, id));
    }
    Ok(out)
}

/// Add `n_ood` out-of-distribution objects and re-render them.
pub fn inject_ood(
    scene: &LabeledImage,
    classes: &ClassSet,
    seed: u64,
    n_ood: usize,
) -> Result<LabeledImage> {
    let shapes = place_ood_shapes(&scene.ood_mask, classes, seed, n_ood)?;
    let mut out = scene.clone();
    let (h, w) = (scene.height(), scene.width());
    for (shape, id) in &shapes {
        shape.for_each_pixel(h, w, |r, c| {
            out.labels.set(r, c, *id);
            out.ood_mask.set(r, c, true);
        });
    }
    out.rgb = render_from_labels(&out.labels, classes, out.render_seed, out.noise_level)?;
    // a stale prediction no longer describes these labels
    out.pred_labels = None;
    out.pred_probs = None;
    out.misclass_mask = Grid::filled(h, w, false);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SceneSpec {
        SceneSpec::square(128, 32)
    }

    #[test]
    fn empty_scene_is_background() {
        let c = ClassSet::default();
        let s = generate_scene(7, &c, &spec(), 0).unwrap();
        assert!(s.labels.data.iter().all(|&l| l == c.background_id));
        assert_eq!(s.ood_mask.count(), 0);
        s.check_invariants(&c).unwrap();
    }

    #[test]
    fn scene_is_deterministic() {
        let c = ClassSet::default();
        let a = generate_scene(7, &c, &spec(), 5).unwrap();
        let b = generate_scene(7, &c, &spec(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_collisions_over_seed_pairs() {
        let c = ClassSet::default();
        for s in 0..100u64 {
            let a = generate_scene(2 * s, &c, &spec(), 5).unwrap();
            let b = generate_scene(2 * s + 1, &c, &spec(), 5).unwrap();
            assert_ne!(a.labels, b.labels, "seed pair {s}");
        }
    }

    #[test]
    fn indivisible_dimensions_rejected() {
        let c = ClassSet::default();
        let bad = SceneSpec {
            height: 100,
            width: 128,
            patch_size: 32,
            noise_level: 0.0,
        };
        let err = generate_scene(1, &c, &bad, 1).unwrap_err();
        assert!(err.to_string().contains("not divisible"), "{err}");
    }

    /// Independent rasterization: half-plane tests written from scratch with
    /// the sign convention flipped, plus the implicit ellipse in product form.
    fn inside_oracle(shape: &Shape, x: f64, y: f64) -> bool {
        match *shape {
            Shape::Rect { x0, y0, x1, y1 } => !(x < x0 || x >= x1 || y < y0 || y >= y1),
            Shape::Ellipse { cx, cy, rx, ry } => {
                (x - cx).powi(2) * ry * ry + (y - cy).powi(2) * rx * rx <= rx * rx * ry * ry
            }
            Shape::Triangle { pts } => {
                let [a, b, c] = pts;
                let area = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
                let l1 = ((b.0 - x) * (c.1 - y) - (c.0 - x) * (b.1 - y)) / area;
                let l2 = ((c.0 - x) * (a.1 - y) - (a.0 - x) * (c.1 - y)) / area;
                let l3 = 1.0 - l1 - l2;
                l1 >= -1e-12 && l2 >= -1e-12 && l3 >= -1e-12
            }
        }
    }

    #[test]
    fn single_injection_matches_rasterized_area() {
        let c = ClassSet::default();
        for seed in 0..20 {
            let scene = generate_scene(7, &c, &spec(), 0).unwrap();
            let shapes = place_ood_shapes(&scene.ood_mask, &c, seed, 1).unwrap();
            let (shape, _) = shapes[0];
            let mut expected = 0;
            for row in 0..128 {
                for col in 0..128 {
                    if inside_oracle(&shape, col as f64 + 0.5, row as f64 + 0.5) {
                        expected += 1;
                    }
                }
            }
            let injected = inject_ood(&scene, &c, seed, 1).unwrap();
            assert_eq!(injected.ood_mask.count(), expected, "seed {seed}");
            let frac = expected as f64 / (128.0 * 128.0);
            assert!(frac > 0.0 && frac < 1.0);
            injected.check_invariants(&c).unwrap();
        }
    }

    #[test]
    fn injection_is_deterministic_and_renders_ood() {
        let c = ClassSet::default();
        let scene = generate_scene(3, &c, &spec(), 4).unwrap();
        let a = inject_ood(&scene, &c, 11, 2).unwrap();
        let b = inject_ood(&scene, &c, 11, 2).unwrap();
        assert_eq!(a.ood_mask, b.ood_mask);
        assert_eq!(a.rgb, b.rgb);
        // only OoD pixels changed color
        for row in 0..128 {
            for col in 0..128 {
                if !*a.ood_mask.get(row, col) {
                    assert_eq!(a.rgb.pixel(row, col), scene.rgb.pixel(row, col));
                }
            }
        }
    }

    #[test]
    fn placement_error_when_full() {
        let c = ClassSet::default();
        let full = Grid::filled(64, 64, true);
        assert!(matches!(
            place_ood_shapes(&full, &c, 0, 1),
            Err(Error::Placement { .. })
        ));
    }
}
