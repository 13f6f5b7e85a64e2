//! Render a moving-shapes dataset to disk and read it back.
//!
//! ```text
//! cargo run --example generate_shapes -- [out_dir]
//! ```

use std::path::PathBuf;

use npvp::datagen::{gen_moving_shapes, load_dataset, split_clip, ShapesConfig, SplitSpec};

fn main() -> npvp::Result<()> {
    env_logger::init();
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "example_runs".into());
    let out = root.join("data");
    let cfg = ShapesConfig {
        num_clips: 64,
        len: 20,
        size: 32,
        num_shapes: 2,
        seed: 0,
    };
    let manifest = gen_moving_shapes(&cfg, &out)?;
    println!(
        "wrote {} clips of shape {:?} to {}",
        manifest.num_clips,
        manifest.frame_shape,
        out.display()
    );

    let data = load_dataset(&out)?;
    let clip = &data.clips[0];
    println!(
        "clip 0: {} frames, times {:?}..",
        clip.len(),
        &clip.times()[..3]
    );

    // A few task splits over the same 20-frame window.
    let specs = [
        SplitSpec::Vfp {
            context: 10,
            targets: 10,
        },
        SplitSpec::Vfi {
            past: 5,
            future: 5,
            targets: 10,
        },
        SplitSpec::Vpe {
            targets: 5,
            context: 15,
        },
        SplitSpec::Vrc {
            min_context: 4,
            max_context: 16,
        },
    ];
    for spec in &specs {
        let s = split_clip(clip.len(), spec, 7)?;
        println!(
            "{:?}: context {:?} targets {:?}",
            s.task, s.context_idx, s.target_idx
        );
    }
    Ok(())
}
