//! From raw posts to padded id sequences and a stratified split.

use urgency::corpus::{binarize_urgency, encode_post, stratified_split, tokenize, RawPost, Vocabulary};

fn main() -> urgency::Result<()> {
    let rows = [
        ("My assignment won't upload and the deadline is TONIGHT!!", 6.5),
        ("Thanks for the great lecture, really enjoyed week 3.", 1.5),
        ("Quiz 2 question 4 seems broken, can't submit", 5.0),
        ("Interesting reading on the history of the topic", 2.0),
        ("Is the deadline for the project extended?", 4.5),
        ("Nice notes, agree with the point about slides", 1.0),
        ("I'm stuck on problem 3 and the forum isn't helping", 5.5),
        ("Week 4 video was good", 3.0),
    ];
    let posts: Vec<RawPost> = rows
        .iter()
        .map(|&(text, urgency)| RawPost {
            text: text.into(),
            urgency,
            course_id: "demo".into(),
        })
        .collect();

    println!("{:?}", tokenize(&posts[0].text));
    for score in [1.0, 4.0, 4.5, 7.0] {
        println!("urgency {score} -> label {}", binarize_urgency(score)?);
    }

    let tokens: Vec<Vec<String>> = posts.iter().map(|p| tokenize(&p.text)).collect();
    let vocab = Vocabulary::build(&tokens, 2)?;
    println!("vocabulary with min frequency 2: {} entries", vocab.len());
    println!("{:?}", vocab.tokens());

    let examples = posts
        .iter()
        .map(|p| encode_post(p, &vocab, 8))
        .collect::<urgency::Result<Vec<_>>>()?;
    for (p, e) in posts.iter().zip(&examples).take(3) {
        println!(
            "{:<60} label {} len {} ids {:?}",
            p.text, e.label, e.true_length, e.token_ids
        );
    }

    let (train, test) = stratified_split(&examples, 0.5, 11)?;
    let urgent = |xs: &[urgency::corpus::LabeledExample]| xs.iter().filter(|e| e.label == 1).count();
    println!(
        "split: train {} ({} urgent), test {} ({} urgent)",
        train.len(),
        urgent(&train),
        test.len(),
        urgent(&test)
    );
    Ok(())
}
