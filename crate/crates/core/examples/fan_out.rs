//! One publisher, several consumers. Reliable subscribers see every frame
//! in order; latest-wins subscribers only ever see the newest one and skip
//! whatever arrived while they were busy.
//!
//! ```text
//! cargo run --example fan_out
//! ```

use std::time::Duration;

use livegate::bus::{DeliveryMode, FrameBus};
use livegate::source::{Pattern, SyntheticSource};

const FRAMES: u64 = 50;

fn main() {
    let bus = FrameBus::new();

    let mut consumers = Vec::new();
    for (name, mode, work) in [
        ("recorder", DeliveryMode::Reliable, Duration::ZERO),
        ("viewer", DeliveryMode::Reliable, Duration::from_millis(1)),
        ("engine", DeliveryMode::Latest, Duration::from_millis(25)),
    ] {
        let mut sub = bus.subscribe(mode, None);
        consumers.push(std::thread::spawn(move || {
            let mut seen = Vec::new();
            while let Ok(frame) = sub.recv_blocking() {
                seen.push(frame.seq());
                std::thread::sleep(work);
            }
            (name, seen, sub.dropped_count())
        }));
    }

    let mut source = SyntheticSource::new(Pattern::MovingGradient, 64, 48, 200.0);
    for _ in 0..FRAMES {
        bus.publish(source.generate_now()).expect("bus open");
        std::thread::sleep(Duration::from_millis(5));
    }
    // Let the slow consumer pick up the final frame before closing.
    std::thread::sleep(Duration::from_millis(50));
    bus.shutdown();

    for consumer in consumers {
        let (name, seen, dropped) = consumer.join().unwrap();
        println!(
            "{name:>8}: {:>2} frames, {:>2} skipped, last {:?}",
            seen.len(),
            dropped,
            seen.last()
        );
        if name == "engine" {
            println!("          saw {seen:?}");
        }
    }
}
