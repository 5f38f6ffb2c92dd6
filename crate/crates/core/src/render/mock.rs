//! Placeholder renderer for toy objects. Each image draws the object the way
//! the view sees it: the silhouette follows the shape only when the shape is
//! visible, the fill uses the object color only when the color is visible, and
//! the silhouette scales with the object only when the size is visible.

use image::{DynamicImage, GrayImage, Luma, Rgb32FImage, Rgba, RgbaImage};
use std::path::Path;

use super::{
    alpha_path, depth_path, image_path, io_err, load_render_output, CameraManifest, CameraRecord,
    RenderError, RenderJob, RenderOutput, RenderStrategy, CAMERAS_FILE,
};
use crate::toy::{Shape, VisibilityMask, WorldObject};

const GREY_BACKGROUND: [u8; 3] = [128, 128, 128];
/// Fill used when the color is hidden: dull slate, clearly not grey.
const HIDDEN_FILL: [u8; 3] = [70, 80, 110];

/// Silhouette test in normalized coordinates `(x, y) ∈ [-1, 1]²`, `r` the
/// half extent.
fn inside(shape: Option<Shape>, x: f64, y: f64, r: f64) -> bool {
    match shape {
        Some(Shape::Cube) => x.abs() <= r && y.abs() <= r,
        Some(Shape::Sphere) => x * x + y * y <= r * r,
        Some(Shape::Cone) => y.abs() <= r && x.abs() <= (r - y) / 2.0,
        Some(Shape::Cylinder) => x.abs() <= 0.6 * r && y.abs() <= r,
        // hidden shape: a soft elongated blob
        None => (x / r).powi(2) + (y / (0.7 * r)).powi(2) <= 1.0,
    }
}

struct Frame {
    rgba: RgbaImage,
    alpha: GrayImage,
    depth: Rgb32FImage,
}

fn draw(world: &WorldObject, mask: VisibilityMask, strategy: RenderStrategy, size: u32, distance: f32) -> Frame {
    let attrs = &world.object.attributes;
    let shape = mask.shape.then_some(attrs.shape);
    let fill = if mask.color { attrs.color.rgb() } else { HIDDEN_FILL };
    let r = if mask.size { 0.45 * attrs.size } else { 0.45 };
    let background = match strategy {
        RenderStrategy::GreyRaytrace => Rgba([GREY_BACKGROUND[0], GREY_BACKGROUND[1], GREY_BACKGROUND[2], 255]),
        RenderStrategy::TransparentRealtime => Rgba([0, 0, 0, 0]),
    };
    let mut rgba = RgbaImage::from_pixel(size, size, background);
    let mut alpha = GrayImage::new(size, size);
    let mut depth = Rgb32FImage::new(size, size);
    let scale = 2.0 / size as f64;
    for (px, py, pixel) in rgba.enumerate_pixels_mut() {
        let x = (px as f64 + 0.5) * scale - 1.0;
        let y = 1.0 - (py as f64 + 0.5) * scale;
        if inside(shape, x, y, r) {
            // simple left-to-right shading so the fill is not flat
            let shade = 0.75 + 0.25 * (x + 1.0) / 2.0;
            let c = fill.map(|v| (v as f64 * shade).round() as u8);
            *pixel = Rgba([c[0], c[1], c[2], 255]);
            alpha.put_pixel(px, py, Luma([255]));
            depth.put_pixel(px, py, image::Rgb([distance; 3]));
        }
    }
    Frame { rgba, alpha, depth }
}

fn save(image: DynamicImage, path: &Path) -> Result<(), RenderError> {
    image.save(path).map_err(|source| RenderError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the full output layout for `job` under `root` and parses it back.
/// Views missing from the toy object are drawn with nothing visible.
pub fn mock_render(job: &RenderJob, world: &WorldObject, root: &Path) -> Result<RenderOutput, RenderError> {
    let dir = root.join(&job.object_id);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut records = Vec::with_capacity(job.views.len());
    for spec in &job.views {
        let mask = world
            .view(spec.view_id)
            .map_or(VisibilityMask::NONE, |v| v.visibility);
        let distance = spec.camera.position().iter().map(|c| c * c).sum::<f64>().sqrt() as f32;
        let frame = draw(world, mask, spec.strategy, job.image_size, distance);
        save(
            DynamicImage::ImageRgba8(frame.rgba),
            &image_path(root, &job.object_id, spec.view_id),
        )?;
        save(
            DynamicImage::ImageLuma8(frame.alpha),
            &alpha_path(root, &job.object_id, spec.view_id),
        )?;
        save(
            DynamicImage::ImageRgb32F(frame.depth),
            &depth_path(root, &job.object_id, spec.view_id),
        )?;
        records.push(CameraRecord {
            view_id: spec.view_id,
            strategy: spec.strategy,
            fov: spec.camera.fov,
            rt: spec.camera.rt,
        });
    }
    let manifest = CameraManifest {
        object_id: job.object_id.clone(),
        views: records,
    };
    let path = dir.join(CAMERAS_FILE);
    let body = serde_json::to_vec_pretty(&manifest).expect("camera manifest serializes");
    std::fs::write(&path, body).map_err(io_err(&path))?;
    load_render_output(root, job)
}

/// Recovers `(object_id, view_id)` from an image path laid out as
/// `<object_id>/<view_id>.png`.
pub fn decode_view_ref(image_ref: &Path) -> Option<(String, u32)> {
    let view_id = image_ref.file_stem()?.to_str()?.parse().ok()?;
    let object_id = image_ref.parent()?.file_name()?.to_str()?.to_string();
    Some((object_id, view_id))
}

#[cfg(test)]
mod tests {
    use super::super::{build_job, detect_all_grey, GreyConfig};
    use super::*;
    use crate::toy::{generate_world, ToyWorld, WorldConfig};

    fn world_object() -> WorldObject {
        ToyWorld::generate(&WorldConfig::new(1, 28), 7).unwrap().objects.remove(0)
    }

    #[test]
    fn writes_full_layout_deterministically() {
        let obj = world_object();
        let job = build_job(obj.object_id(), 3);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let out_a = mock_render(&job, &obj, a.path()).unwrap();
        mock_render(&job, &obj, b.path()).unwrap();
        assert_eq!(out_a.views.len(), 28);
        for v in &out_a.views {
            let rel = v.view.image_ref.strip_prefix(a.path()).unwrap();
            let bytes_a = std::fs::read(&v.view.image_ref).unwrap();
            let bytes_b = std::fs::read(b.path().join(rel)).unwrap();
            assert_eq!(bytes_a, bytes_b);
            assert_eq!(
                decode_view_ref(&v.view.image_ref),
                Some((obj.object_id().to_string(), v.view.view_id))
            );
        }
    }

    #[test]
    fn toy_renders_are_never_all_grey() {
        let world = generate_world(4, 28, 1);
        let dir = tempfile::tempdir().unwrap();
        for obj in &world.objects {
            let out = mock_render(&build_job(obj.object_id(), 0), obj, dir.path()).unwrap();
            for v in out.views_with(RenderStrategy::GreyRaytrace) {
                assert!(!detect_all_grey(&v.image_ref, &GreyConfig::default()).unwrap());
            }
        }
    }

    #[test]
    fn image_content_depends_on_mask() {
        let obj = world_object();
        let full = draw(&obj, VisibilityMask::FULL, RenderStrategy::GreyRaytrace, 32, 2.0);
        let none = draw(&obj, VisibilityMask::NONE, RenderStrategy::GreyRaytrace, 32, 2.0);
        assert_ne!(full.rgba, none.rgba);
        let transparent = draw(&obj, VisibilityMask::FULL, RenderStrategy::TransparentRealtime, 32, 2.0);
        assert_eq!(transparent.rgba.get_pixel(0, 0)[3], 0);
    }
}
