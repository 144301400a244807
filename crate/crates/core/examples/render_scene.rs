//! Render a synthetic video with a moving sphere and print what the oracle
//! produces per frame and per pair.
use dynscene::geom::ImageSize;
use dynscene::graph::build_window_graph;
use dynscene::oracle::{render_sequence, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let size = ImageSize::new(48, 64)?;
    let spec = SceneSpec::dolly_orbit(12, size, 50.0).with_circling_sphere(2.2, 0.5, 0.25, 12.0);
    let graph = build_window_graph(12, 4, 1)?;
    let seq = render_sequence(&spec, &graph)?;

    println!("camera path length {:.3}", spec.path_length());
    for (t, f) in seq.frames.iter().enumerate() {
        let moving = f.dynamic_mask.as_slice().iter().filter(|&&b| b).count();
        let depths = f.depth.depth.as_slice();
        let (lo, hi) = depths.iter().fold((f64::MAX, 0.0f64), |(a, b), &d| (a.min(d), b.max(d)));
        println!(
            "frame {t:2}: center {:?}  depth {lo:.2}..{hi:.2}  moving pixels {moving}",
            f.pose.center().as_slice()
        );
    }
    let e = &seq.edges[0];
    println!(
        "edge {}: {} valid points in the second pointmap, {} valid flow vectors",
        e.edge,
        e.pair.pointmap_other.num_valid(),
        e.flow.valid.as_slice().iter().filter(|&&b| b).count()
    );
    Ok(())
}
