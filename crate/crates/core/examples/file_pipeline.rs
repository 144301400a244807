//! The command-line workflow as library calls: write a synthetic scene to
//! disk, reconstruct it from the files, and evaluate the written outputs.
use dynscene::cli::{self, RunConfig, SceneDirectory};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dynscene_pipeline"));
    let mut config = RunConfig::default();
    config.scene.frames = 10;
    config.scene.width = 32;
    config.scene.height = 24;
    config.scene.focal = 26.0;
    config.scene.moving_sphere = Some([2.2, 0.5, 0.25, 10.0]);
    config.window = 4;
    config.stride = 1;

    let scene = root.join("scene");
    let out = root.join("recon");
    let s = cli::cmd_synth(&config, &scene)?;
    println!("synth: {} frames, {} edges, {:.1}% moving pixels", s.frames, s.edges, 100.0 * s.dynamic_fraction);
    let a = cli::cmd_align(&config, &scene, &out)?;
    println!("align: {} iterations, final loss {:.5}", a.iterations, a.final_loss);

    let dir = SceneDirectory::new(&scene);
    print!("{}", cli::cmd_eval_pose(&out.join("trajectory.tum"), &dir.poses(), 1)?.to_text());
    print!("{}", cli::depth_report_text(&cli::cmd_eval_depth(&out.join("depth"), &dir.depth_dir(), config.align)?));
    println!("outputs in {}", out.display());
    Ok(())
}
