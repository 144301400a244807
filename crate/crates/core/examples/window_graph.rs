//! Edge counts of the sliding-window graph for a few window/stride settings.
use dynscene::graph::{build_window_graph, window_edge_count, window_offsets};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let frames = 60;
    for (w, s) in [(3, 1), (9, 1), (9, 2), (9, 4), (15, 3)] {
        let graph = build_window_graph(frames, w, s)?;
        println!(
            "window {w:2} stride {s}: gaps {:?}  edges {}  ordered pairs {}  connected {}",
            window_offsets(w, s),
            window_edge_count(frames, w, s),
            graph.clone().with_reverse_edges().edges.len(),
            graph.is_connected()
        );
    }
    let small = build_window_graph(6, 3, 2)?;
    let listed: Vec<String> = small.edges.iter().map(|e| e.to_string()).collect();
    println!("6 frames, window 3, stride 2: {}", listed.join(" "));
    Ok(())
}
