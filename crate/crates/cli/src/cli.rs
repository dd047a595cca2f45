use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "uvavatar", version, about = "UV-anchored Gaussian avatar engine")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render one image of the avatar.
    Render(RenderArgs),
    /// Render an evenly spaced ring of views (PNG plus .cam.json per view).
    Turntable(TurntableArgs),
    /// Render every frame of a pose sequence.
    Animate(AnimateArgs),
    /// Fit the color (and optionally opacity) plane to target views.
    FitColor(FitArgs),
    /// Re-shape the avatar and render the result.
    EditShape(EditShapeArgs),
    /// Blend a PNG patch into the color plane.
    EditTexture(EditTextureArgs),
    /// Check asset files for format and invariant errors.
    Validate(ValidateArgs),
    /// Write the procedural toy humanoid template.
    MakeToy(MakeToyArgs),
    /// Run the local HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct AvatarArgs {
    /// Body template (.btpl); the built-in toy humanoid when omitted.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Gaussian attribute maps (.gam); neutral gray maps when omitted.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Shape coefficients, comma separated; zeros when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Vec<f64>,
    /// Map resolution used for neutral maps.
    #[arg(long, default_value_t = 256)]
    pub uv_res: u32,
    /// Skinning-weight volume resolution per axis.
    #[arg(long, default_value_t = 64)]
    pub volume_res: usize,
}

#[derive(Args, Debug, Clone)]
pub struct PoseArgs {
    /// Pose sequence (.pose.json); identity pose when omitted.
    #[arg(long)]
    pub pose: Option<PathBuf>,
    /// Frame of the pose sequence to use.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ViewArgs {
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: u32,
    /// Focal length in millimetres on a 36 mm sensor.
    #[arg(long, default_value_t = 50.0)]
    pub focal_mm: f64,
    /// Camera elevation in degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub elevation: f64,
    /// Orbit radius in meters; framed to the avatar when omitted.
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub avatar: AvatarArgs,
    #[command(flatten)]
    pub pose: PoseArgs,
    /// Camera file (.cam.json).
    #[arg(long)]
    pub camera: PathBuf,
    /// Background color, linear RGB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [1.0, 1.0, 1.0])]
    pub background: Vec<f64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TurntableArgs {
    #[command(flatten)]
    pub avatar: AvatarArgs,
    #[command(flatten)]
    pub pose: PoseArgs,
    #[command(flatten)]
    pub view: ViewArgs,
    #[arg(long, default_value_t = 24)]
    pub views: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [1.0, 1.0, 1.0])]
    pub background: Vec<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnimateArgs {
    #[command(flatten)]
    pub avatar: AvatarArgs,
    /// Pose sequence (.pose.json).
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [1.0, 1.0, 1.0])]
    pub background: Vec<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub avatar: AvatarArgs,
    #[command(flatten)]
    pub pose: PoseArgs,
    /// Directory of view_NNN.png targets with matching view_NNN.cam.json cameras.
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.02)]
    pub step: f64,
    /// Also optimize the opacity plane.
    #[arg(long)]
    pub opacity: bool,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [1.0, 1.0, 1.0])]
    pub background: Vec<f64>,
    /// Output attribute maps (.gam).
    #[arg(long, short)]
    pub out: PathBuf,
    /// Write the loss trace as CSV "iter,loss,psnr".
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EditShapeArgs {
    #[command(flatten)]
    pub avatar: AvatarArgs,
    #[command(flatten)]
    pub pose: PoseArgs,
    /// New shape coefficients, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub set: Vec<f64>,
    /// Camera file; a front view framed to the avatar when omitted.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[command(flatten)]
    pub view: ViewArgs,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [1.0, 1.0, 1.0])]
    pub background: Vec<f64>,
    /// Render of the re-shaped avatar.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EditTextureArgs {
    #[command(flatten)]
    pub avatar: AvatarArgs,
    /// Patch image (PNG, alpha honored).
    #[arg(long)]
    pub patch: PathBuf,
    /// Target UV rectangle u0,v0,u1,v1.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.0, 0.0, 1.0, 1.0])]
    pub rect: Vec<f64>,
    /// Output attribute maps (.gam).
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Files to check: .btpl, .gam, .wvol, .cam.json, .pose.json, .png.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Template used to check maps and pose files; the toy humanoid when omitted.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Map resolution for the template's own anchor checks.
    #[arg(long, default_value_t = 256)]
    pub uv_res: u32,
    #[arg(long, default_value_t = 32)]
    pub volume_res: usize,
}

#[derive(Args, Debug)]
pub struct MakeToyArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    /// Number of joints (pelvis, chest, then the arm chain).
    #[arg(long, default_value_t = 5)]
    pub joints: usize,
    /// Mesh rings per bone.
    #[arg(long, default_value_t = 8)]
    pub segments: usize,
    /// Seed for the capsule-radius jitter.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write neutral gray maps at --uv-res.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub uv_res: u32,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub avatar: AvatarArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Static viewer assets served under /ui/.
    #[arg(long, default_value = "viewer/dist")]
    pub ui_dir: PathBuf,
    #[command(flatten)]
    pub view: ViewArgs,
}
