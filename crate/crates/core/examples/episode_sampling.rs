//! Samples N-way K-shot episodes and shows that the sampler is a pure
//! function of its seed.

use fsf::data::{make_synthetic_dataset, sample_episode, EpisodeSpec, SyntheticSpec};
use fsf::evaluation::episode_seed;

fn main() -> fsf::Result<()> {
    let data = make_synthetic_dataset(&SyntheticSpec::new(10, 20, 36, 0))?;
    let master = 42;
    for i in 0..3 {
        let spec = EpisodeSpec::new(5, 5, 15, episode_seed(master, i))?;
        let ep = sample_episode(&data, &spec)?;
        println!(
            "episode {i} (seed {}): classes {:?}, {} support, {} query",
            spec.seed,
            ep.classes,
            ep.support.len(),
            ep.query.len()
        );
        let again = sample_episode(&data, &spec)?;
        assert_eq!(ep.classes, again.classes);
        assert_eq!(ep.support_labels(), again.support_labels());
    }

    // Asking for more images than a class holds is an error, not a silent
    // shrink of the episode.
    let too_big = EpisodeSpec::new(5, 10, 15, 0)?;
    match sample_episode(&data, &too_big) {
        Err(e) => println!("10-shot with 15 queries on 20 images per class: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
