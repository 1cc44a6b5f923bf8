//! Generates a corpus, writes it as JSON lines and reads it back.

use recobf::corpus::{generate_corpus, load_corpus, save_corpus, CorpusConfig};

fn main() -> recobf::Result<()> {
    let corpus = generate_corpus(&CorpusConfig::default(), 7)?;
    let mut per_class = vec![0usize; corpus.n_classes()];
    for v in &corpus.videos {
        for &c in &v.class_memberships {
            per_class[c] += 1;
        }
    }
    println!(
        "{} videos, {} classes, embedding dim {}",
        corpus.len(),
        corpus.n_classes(),
        corpus.embedding_dim()
    );
    println!("videos per class {per_class:?}");

    let dir = std::env::temp_dir().join("recobf-example-corpus");
    save_corpus(&corpus, &dir)?;
    let back = load_corpus(&dir)?;
    println!(
        "round trip through {}: videos equal {}",
        dir.display(),
        back.videos == corpus.videos
    );
    Ok(())
}
