use crate::cli::*;
use crate::CliError;
use anyhow::{anyhow, Context};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use uvavatar::avatar::{AvatarConfig, NEUTRAL_GRAY};
use uvavatar::fit::{fit_color, psnr_from_mse, FitConfig, FitView};
use uvavatar::ops::{animate, edit_shape, edit_texture, PoseSequence, TexturePatch, UvRect};
use uvavatar::renderer::{make_rig, Intrinsics};
use uvavatar::skinning::WeightVolume;
use uvavatar::template::{load_template, make_toy_template, save_template, toy_humanoid, TemplateError};
use uvavatar::uvgauss::{build_anchor_table, decode_gaussians, load_maps, save_maps, MapsError};
use uvavatar::{Avatar, BodyTemplate, Camera, Image, Pose, ShapeParams};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Render(a) => render(a),
        Command::Turntable(a) => turntable(a),
        Command::Animate(a) => animate_cmd(a),
        Command::FitColor(a) => fit(a),
        Command::EditShape(a) => edit_shape_cmd(a),
        Command::EditTexture(a) => edit_texture_cmd(a),
        Command::Validate(a) => validate(a),
        Command::MakeToy(a) => make_toy(a),
        Command::Serve(a) => crate::server::serve(a),
    }
}

pub fn load_template_arg(path: Option<&Path>) -> Result<Arc<BodyTemplate>> {
    Ok(Arc::new(match path {
        Some(p) => load_template(p).map_err(|e| CliError::user(anyhow!("{}: {e}", p.display())))?,
        None => toy_humanoid(),
    }))
}

pub fn load_avatar(args: &AvatarArgs) -> Result<Avatar> {
    let template = load_template_arg(args.template.as_deref())?;
    let config = AvatarConfig {
        uv_resolution: args.uv_res,
        volume_resolution: [args.volume_res; 3],
    };
    if args.uv_res == 0 {
        return Err(CliError::user(anyhow!("--uv-res must be positive")));
    }
    let shape = if args.beta.is_empty() {
        ShapeParams::zeros(template.shape_count())
    } else {
        ShapeParams { beta: args.beta.clone() }
    };
    let avatar = match &args.maps {
        Some(path) => {
            let (maps, report) =
                load_maps(path).map_err(|e| CliError::user(anyhow!("{}: {e}", path.display())))?;
            if report != Default::default() {
                log::warn!("{}: sanitized on load: {report:?}", path.display());
            }
            Avatar::new(template, maps, shape, config)?
        }
        None => Avatar::with_shape(&Avatar::neutral(template, config, NEUTRAL_GRAY)?, shape)?,
    };
    let mismatched = avatar.mask_mismatches();
    if mismatched > 0 {
        log::warn!("{mismatched} texels disagree between the maps' mask and the template's UV coverage");
    }
    Ok(avatar)
}

pub fn load_pose(args: &PoseArgs, template: &BodyTemplate) -> Result<Pose> {
    let Some(path) = &args.pose else {
        return Ok(Pose::identity(template.joint_count()));
    };
    let seq = PoseSequence::load(path, template).map_err(|e| CliError::user(anyhow!("{}: {e}", path.display())))?;
    seq.frames.get(args.frame).cloned().ok_or_else(|| {
        CliError::user(anyhow!("{}: frame {} out of range ({} frames)", path.display(), args.frame, seq.frames.len()))
    })
}

fn load_camera(path: &Path) -> Result<Camera> {
    Camera::load(path).map_err(|e| CliError::user(anyhow!("{e}")))
}

fn background(v: &[f64]) -> Result<[f64; 3]> {
    match *v {
        [r, g, b] if v.iter().all(|c| c.is_finite()) => Ok([r, g, b]),
        _ => Err(CliError::user(anyhow!("--background needs three finite values r,g,b, got {v:?}"))),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(CliError::user)
}

/// Post-condition on every produced image.
fn check_image(img: &Image) -> Result<()> {
    if img.data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CliError::internal(anyhow!("rendered image contains non-finite values")))
    }
}

fn write_png(img: &Image, path: &Path) -> Result<()> {
    check_image(img)?;
    img.save_png(path).map_err(|e| CliError::user(anyhow!("{e}")))
}

/// Ring of cameras framed on the avatar.
pub fn rig_for(avatar: &Avatar, view: &ViewArgs, n: usize) -> Result<Vec<Camera>> {
    if view.size == 0 {
        return Err(CliError::user(anyhow!("--size must be positive")));
    }
    let radius = view
        .radius
        .unwrap_or_else(|| default_radius(avatar.extent(), view.focal_mm));
    let intr = Intrinsics::from_focal_mm(view.focal_mm, view.size, view.size);
    make_rig(n, view.elevation, radius, avatar.center(), intr).map_err(|e| CliError::user(anyhow!("{e}")))
}

/// Distance at which the avatar's largest extent fills about 60% of the frame.
pub fn default_radius(extent: f64, focal_mm: f64) -> f64 {
    1.2 * extent * focal_mm / uvavatar::renderer::SENSOR_WIDTH_MM + 0.1
}

fn render(a: RenderArgs) -> Result<()> {
    let camera = load_camera(&a.camera)?;
    let avatar = load_avatar(&a.avatar)?;
    let pose = load_pose(&a.pose, avatar.template())?;
    let img = avatar.render(&pose, &camera, background(&a.background)?)?;
    write_png(&img, &a.out)?;
    println!("wrote {} ({}x{})", a.out.display(), img.width, img.height);
    Ok(())
}

fn turntable(a: TurntableArgs) -> Result<()> {
    if a.views == 0 {
        return Err(CliError::user(anyhow!("--views must be at least 1")));
    }
    let avatar = load_avatar(&a.avatar)?;
    let pose = load_pose(&a.pose, avatar.template())?;
    let cameras = rig_for(&avatar, &a.view, a.views)?;
    create_dir(&a.out_dir)?;
    let canonical = avatar.canonical_gaussians()?;
    let (posed, _) = avatar.pose_gaussians(&canonical, &pose)?;
    posed.validate().map_err(|e| CliError::internal(anyhow!("posed gaussians: {e}")))?;
    for (k, cam) in cameras.iter().enumerate() {
        let img = uvavatar::renderer::rasterize(
            &uvavatar::renderer::project(cam, &posed).splats,
            cam,
            background(&a.background)?,
        );
        write_png(&img, &a.out_dir.join(format!("view_{k:03}.png")))?;
        cam.save(a.out_dir.join(format!("view_{k:03}.cam.json")))
            .map_err(|e| CliError::user(anyhow!("{e}")))?;
    }
    println!(
        "wrote {} views to {} ({}° steps)",
        cameras.len(),
        a.out_dir.display(),
        360.0 / cameras.len() as f64
    );
    Ok(())
}

fn animate_cmd(a: AnimateArgs) -> Result<()> {
    let camera = load_camera(&a.camera)?;
    let avatar = load_avatar(&a.avatar)?;
    let seq = PoseSequence::load(&a.poses, avatar.template())
        .map_err(|e| CliError::user(anyhow!("{}: {e}", a.poses.display())))?;
    let frames = animate(&avatar, &seq, &camera, background(&a.background)?)?;
    create_dir(&a.out_dir)?;
    for (k, img) in frames.iter().enumerate() {
        write_png(img, &a.out_dir.join(format!("frame_{k:04}.png")))?;
    }
    println!("wrote {} frames to {} at {} fps", frames.len(), a.out_dir.display(), seq.fps);
    Ok(())
}

/// `view_NNN.png` files with their `view_NNN.cam.json`, sorted by name.
pub fn load_targets(dir: &Path) -> Result<Vec<(Camera, Image)>> {
    let mut pngs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))
        .map_err(CliError::user)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    pngs.sort();
    if pngs.is_empty() {
        return Err(CliError::user(anyhow!("{}: no target PNGs found", dir.display())));
    }
    let mut out = Vec::with_capacity(pngs.len());
    for png in pngs {
        let cam_path = png.with_extension("cam.json");
        let camera = load_camera(&cam_path)?;
        let image = Image::load_png(&png).map_err(|e| CliError::user(anyhow!("{e}")))?;
        if (image.width, image.height) != (camera.width, camera.height) {
            return Err(CliError::user(anyhow!(
                "{}: image is {}x{} but its camera is {}x{}",
                png.display(),
                image.width,
                image.height,
                camera.width,
                camera.height
            )));
        }
        out.push((camera, image));
    }
    Ok(out)
}

fn fit(a: FitArgs) -> Result<()> {
    let avatar = load_avatar(&a.avatar)?;
    let pose = load_pose(&a.pose, avatar.template())?;
    let views = load_targets(&a.targets)?
        .into_iter()
        .map(|(camera, target)| FitView { camera, target, pose: pose.clone() })
        .collect();
    let mut config = FitConfig::new(views);
    config.iterations = a.iterations;
    config.step_size = a.step;
    config.optimize_opacity = a.opacity;
    config.background = background(&a.background)?;
    let result = fit_color(&avatar, &config)?;
    result
        .maps
        .check_invariants()
        .map_err(|e| CliError::internal(anyhow!("fitted maps: {e}")))?;
    save_maps(&result.maps, &a.out).map_err(|e| CliError::user(anyhow!("{e}")))?;
    if let Some(trace_path) = &a.trace {
        let mut csv = String::from("iter,loss,psnr\n");
        for (i, (loss, mse)) in result.trace.iter().zip(&result.mse_trace).enumerate() {
            csv.push_str(&format!("{i},{loss},{}\n", psnr_from_mse(*mse)));
        }
        fs::write(trace_path, csv)
            .with_context(|| format!("writing {}", trace_path.display()))
            .map_err(CliError::user)?;
    }
    let first = result.trace[0];
    let last = *result.trace.last().expect("trace has iterations + 1 entries");
    println!(
        "fit {} views, {} iterations: loss {first:.6e} -> {last:.6e}, psnr {:.2} dB",
        config.views.len(),
        config.iterations,
        psnr_from_mse(*result.mse_trace.last().unwrap())
    );
    Ok(())
}

fn edit_shape_cmd(a: EditShapeArgs) -> Result<()> {
    let avatar = load_avatar(&a.avatar)?;
    let pose = load_pose(&a.pose, avatar.template())?;
    let camera = match &a.camera {
        Some(p) => load_camera(p)?,
        None => rig_for(&avatar, &a.view, 1)?.remove(0),
    };
    let bg = background(&a.background)?;
    let before = avatar.render(&pose, &camera, bg)?;
    let edited = edit_shape(&avatar, ShapeParams { beta: a.set.clone() })?;
    if edited.anchors().len() != avatar.anchors().len() {
        return Err(CliError::internal(anyhow!(
            "anchor count changed under a shape edit ({} -> {})",
            avatar.anchors().len(),
            edited.anchors().len()
        )));
    }
    let after = edited.render(&pose, &camera, bg)?;
    write_png(&after, &a.out)?;
    println!(
        "shape {:?} -> {:?}: {} anchors, silhouette {} -> {} px, wrote {}",
        avatar.shape().beta,
        edited.shape().beta,
        edited.anchors().len(),
        before.count_different(bg, 1e-3),
        after.count_different(bg, 1e-3),
        a.out.display()
    );
    Ok(())
}

fn edit_texture_cmd(a: EditTextureArgs) -> Result<()> {
    let avatar = load_avatar(&a.avatar)?;
    if a.rect.len() != 4 {
        return Err(CliError::user(anyhow!("--rect needs four values u0,v0,u1,v1, got {:?}", a.rect)));
    }
    let rect = UvRect::new(a.rect[0], a.rect[1], a.rect[2], a.rect[3]).map_err(|e| CliError::user(anyhow!("{e}")))?;
    let patch = TexturePatch::load_png(&a.patch, rect).map_err(|e| CliError::user(anyhow!("{}: {e}", a.patch.display())))?;
    let edited = edit_texture(&avatar.maps, &patch).map_err(|e| CliError::user(anyhow!("{e}")))?;
    let changed = edited.color.iter().zip(&avatar.maps.color).filter(|(a, b)| a != b).count();
    save_maps(&edited, &a.out).map_err(|e| CliError::user(anyhow!("{e}")))?;
    println!("changed {changed} texels, wrote {}", a.out.display());
    Ok(())
}

fn make_toy(a: MakeToyArgs) -> Result<()> {
    if a.joints < 2 {
        return Err(CliError::user(anyhow!("--joints must be at least 2")));
    }
    let t = make_toy_template(a.joints, a.segments, a.seed);
    t.validate().map_err(|e| CliError::internal(anyhow!("toy template: {e}")))?;
    save_template(&t, &a.out).map_err(|e| CliError::user(anyhow!("{e}")))?;
    print!(
        "wrote {}: {} vertices, {} triangles, {} joints, {} shapes",
        a.out.display(),
        t.vertex_count(),
        t.triangle_count(),
        t.joint_count(),
        t.shape_count()
    );
    if let Some(maps_path) = &a.maps {
        let anchors = build_anchor_table(&t, &t.base_vertices(), a.uv_res, a.uv_res);
        let maps = uvavatar::uvgauss::default_maps(&anchors, NEUTRAL_GRAY);
        save_maps(&maps, maps_path).map_err(|e| CliError::user(anyhow!("{e}")))?;
        print!("; maps {} ({} valid texels)", maps_path.display(), anchors.len());
    }
    println!();
    Ok(())
}

/// Result of checking one file: summary on success, reason on failure.
type Check = std::result::Result<String, String>;

fn validate(a: ValidateArgs) -> Result<()> {
    let template = load_template_arg(a.template.as_deref())?;
    let mut failures = 0;
    for path in &a.files {
        let outcome = validate_file(path, &template, &a);
        match outcome {
            Ok(summary) => println!("OK   {}: {summary}", path.display()),
            Err(reason) => {
                failures += 1;
                println!("FAIL {}: {reason}", path.display());
            }
        }
    }
    if failures > 0 {
        Err(CliError::user(anyhow!("{failures} of {} files failed validation", a.files.len())))
    } else {
        Ok(())
    }
}

fn validate_file(path: &Path, template: &Arc<BodyTemplate>, a: &ValidateArgs) -> Check {
    let bytes = fs::read(path).map_err(|e| format!("cannot read: {e}"))?;
    let name = path.to_string_lossy();
    if bytes.starts_with(uvavatar::template::MAGIC) {
        check_template(&bytes, a)
    } else if bytes.starts_with(uvavatar::uvgauss::MAGIC) {
        check_maps(&bytes, template, a)
    } else if bytes.starts_with(uvavatar::skinning::WVOL_MAGIC) {
        let vol = WeightVolume::from_bytes(&bytes).map_err(|e| e.to_string())?;
        let worst = vol.voxels.iter().map(|w| (w.sum() - 1.0).abs()).fold(0.0, f64::max);
        if worst > 1e-5 {
            return Err(format!("voxel weights deviate from a partition of unity by {worst:.2e}"));
        }
        Ok(format!("weight volume {:?}, max |Σw−1| {worst:.1e}", vol.resolution))
    } else if name.ends_with(".cam.json") {
        let text = String::from_utf8(bytes).map_err(|e| e.to_string())?;
        let cam = Camera::from_json(&text).map_err(|e| e.to_string())?;
        Ok(format!("camera {}x{}, fx {:.2}, fy {:.2}", cam.width, cam.height, cam.fx, cam.fy))
    } else if name.ends_with(".pose.json") {
        let text = String::from_utf8(bytes).map_err(|e| e.to_string())?;
        let seq = PoseSequence::from_json(&text, template).map_err(|e| e.to_string())?;
        let transforms = seq
            .frames
            .iter()
            .map(|p| template.forward_kinematics(p).map(|b| b.max_rigidity_error()))
            .collect::<std::result::Result<Vec<f64>, TemplateError>>()
            .map_err(|e| e.to_string())?;
        let worst = transforms.into_iter().fold(0.0, f64::max);
        if worst > 1e-6 {
            return Err(format!("joint transforms not rigid (error {worst:.2e})"));
        }
        Ok(format!("pose sequence, {} frames at {} fps", seq.frames.len(), seq.fps))
    } else if bytes.starts_with(b"\x89PNG") {
        let img = Image::from_png(&bytes).map_err(|e| e.to_string())?;
        Ok(format!("png {}x{}", img.width, img.height))
    } else {
        Err("unrecognized file type".into())
    }
}

fn check_template(bytes: &[u8], a: &ValidateArgs) -> Check {
    let t = uvavatar::template::template_from_bytes(bytes).map_err(|e| e.to_string())?;
    let b = t
        .forward_kinematics(&Pose::identity(t.joint_count()))
        .map_err(|e| e.to_string())?;
    if b.transforms.iter().any(|m| *m != uvavatar::math::Mat4::identity()) {
        return Err("identity pose does not give identity joint transforms".into());
    }
    let config = AvatarConfig { uv_resolution: a.uv_res, volume_resolution: [a.volume_res; 3] };
    let avatar = Avatar::neutral(Arc::new(t), config, NEUTRAL_GRAY).map_err(|e| e.to_string())?;
    let set = avatar.canonical_gaussians().map_err(|e| e.to_string())?;
    set.validate()?;
    let worst_voxel = avatar.volume().voxels.iter().map(|w| (w.sum() - 1.0).abs()).fold(0.0, f64::max);
    if worst_voxel > 1e-5 {
        return Err(format!("weight volume deviates from a partition of unity by {worst_voxel:.2e}"));
    }
    let t = avatar.template();
    Ok(format!(
        "template: {} vertices, {} triangles, {} joints, {} shapes; {} anchors at {}²",
        t.vertex_count(),
        t.triangle_count(),
        t.joint_count(),
        t.shape_count(),
        avatar.anchors().len(),
        a.uv_res
    ))
}

fn check_maps(bytes: &[u8], template: &Arc<BodyTemplate>, a: &ValidateArgs) -> Check {
    let (maps, report) = uvavatar::GaussianAttributeMaps::from_bytes(bytes).map_err(|e| e.to_string())?;
    maps.check_invariants().map_err(|e| e.to_string())?;
    let anchors = build_anchor_table(template, &template.base_vertices(), maps.width, maps.height);
    let mask = anchors.mask();
    let mismatched = mask.iter().zip(&maps.mask).filter(|(x, y)| (**x != 0) != (**y != 0)).count();
    if mismatched > 0 {
        return Err(format!("{mismatched} texels disagree with the template's UV coverage"));
    }
    let set = decode_gaussians(&anchors, &maps).map_err(|e: MapsError| e.to_string())?;
    set.validate()?;
    let config = AvatarConfig { uv_resolution: maps.width, volume_resolution: [a.volume_res; 3] };
    let avatar = Avatar::new(template.clone(), maps, ShapeParams::zeros(template.shape_count()), config)
        .map_err(|e| e.to_string())?;
    avatar.canonical_gaussians().map_err(|e| e.to_string())?.validate()?;
    Ok(format!(
        "maps {}x{}, {} valid texels; sanitized {} colors, {} opacities, {} rotations",
        avatar.maps.width,
        avatar.maps.height,
        avatar.maps.valid_count(),
        report.color_clamped,
        report.opacity_clamped,
        report.rotations_renormalized
    ))
}
