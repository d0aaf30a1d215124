//! The freeze detector scores consecutive frames by mean absolute
//! difference of downsampled luma and declares the screen frozen after a
//! run of near-identical frames.
//!
//! ```text
//! cargo run --example frozen_screen
//! ```

use livegate::freeze::{freeze_score, freeze_update, FreezeConfig, FreezeState};
use livegate::source::{Pattern, SyntheticSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = FreezeConfig::default();
    println!(
        "tau {} gray levels, k {} frames, downsample {} px\n",
        config.tau, config.k, config.downsample
    );

    for pattern in [Pattern::Static, Pattern::MovingGradient, Pattern::Noise] {
        let mut source = SyntheticSource::new(pattern, 64, 64, 30.0);
        let mut prev = source.generate_now();
        let mut state = FreezeState::default();
        let mut line = String::new();
        for _ in 0..8 {
            let frame = source.generate_now();
            let score = freeze_score(&prev, &frame, config.downsample)?;
            state = freeze_update(state, score, &config);
            line += &format!(" {score:6.2}{}", if state.frozen { "*" } else { " " });
            prev = frame;
        }
        println!("{:<16}{line}", format!("{pattern:?}"));
    }
    println!("\n* = frozen");
    Ok(())
}
