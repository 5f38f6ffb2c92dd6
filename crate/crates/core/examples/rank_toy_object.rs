//! Trains the toy denoiser, then ranks the 28 views of one toy object and
//! prints the ordering next to the ground-truth informative views.
//!
//! ```text
//! cargo run --release -p diffurank-core --example rank_toy_object
//! ```

use diffurank_core::diffusion::ScoringConfig;
use diffurank_core::ranking::rank_view_ids;
use diffurank_core::toy::{generate_world, train_with, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = train_with(&generate_world(200, 2, 11), &TrainConfig::default())?;
    let world = generate_world(1, 28, 42);
    let object = &world.objects[0];
    let views: Vec<_> = object.views.iter().map(|v| (v.view_id, None)).collect();
    let config = ScoringConfig::default().with_samples(64);
    let result = rank_view_ids(&model, &object.object.latent, &views, &object.captions, &config, 6)?;

    println!("object {}", object.object_id());
    for view in &result.ordered_views {
        let marker = if object.is_informative(view.view_id) { "*" } else { " " };
        println!("{marker} view {:>2}  score {:+.5}", view.view_id, view.score);
    }
    println!("selected {:?} ({} denoiser calls)", result.selected, result.denoiser_calls);
    Ok(())
}
