use super::{token_pieces, Corpus, Segment, TokenizerConfig};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_TOKENS: usize = 512;

/// Splits every segment longer than `max_tokens` into consecutive chunks of
/// at most `max_tokens` tokens, greedily from the left.
///
/// Cuts are placed at the first byte of the first token of the next chunk,
/// and the chunk before a cut loses one trailing whitespace character.
/// Children are named `<parent>#<k>`, carry `parent_id`, and inherit the
/// parent's label and domain.
pub fn segment_documents(corpus: &Corpus, max_tokens: usize, tokenizer: &TokenizerConfig) -> Result<Corpus> {
    if max_tokens == 0 {
        return Err(Error::invalid("max_tokens must be at least 1"));
    }
    let mut out = Vec::with_capacity(corpus.len());
    for seg in corpus {
        let pieces = token_pieces(&seg.text, tokenizer);
        if pieces.len() <= max_tokens {
            out.push(seg.clone());
            continue;
        }
        let n_chunks = pieces.len().div_ceil(max_tokens);
        let cuts: Vec<usize> = (0..=n_chunks)
            .map(|k| match k {
                0 => 0,
                k if k == n_chunks => seg.text.len(),
                k => pieces[k * max_tokens].span.start,
            })
            .collect();
        for k in 0..n_chunks {
            let mut text = &seg.text[cuts[k]..cuts[k + 1]];
            if k + 1 < n_chunks {
                if let Some(c) = text.chars().next_back().filter(|c| c.is_whitespace()) {
                    text = &text[..text.len() - c.len_utf8()];
                }
            }
            out.push(Segment {
                id: format!("{}#{k}", seg.id),
                text: text.to_string(),
                label: seg.label,
                domain: seg.domain.clone(),
                parent_id: Some(seg.id.clone()),
                extra: seg.extra.clone(),
            });
        }
    }
    Corpus::new(out, corpus.domain().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Domain};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    fn cfg() -> TokenizerConfig {
        TokenizerConfig::default()
    }

    #[test]
    fn splits_600_into_512_and_88() {
        let c = Corpus::from_segments(vec![Segment::new("d", words(600), Some(1), Domain::Gtc)]).unwrap();
        let out = segment_documents(&c, 512, &cfg()).unwrap();
        let lens: Vec<usize> = out.iter().map(|s| s.tokens().len()).collect();
        assert_eq!(lens, [512, 88]);
        assert!(out.iter().all(|s| s.parent_id.as_deref() == Some("d") && s.label == Some(1)));
        // one boundary space dropped per cut
        let joined = out.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
        assert_eq!(joined, words(600));
    }

    #[test]
    fn short_document_unchanged() {
        let c = Corpus::from_segments(vec![Segment::new("d", words(100), Some(0), Domain::Gtc)]).unwrap();
        let out = segment_documents(&c, 512, &cfg()).unwrap();
        assert_eq!(out, c);
        assert!(out.segments()[0].parent_id.is_none());
    }

    #[test]
    fn zero_limit_rejected() {
        let c = Corpus::from_segments(vec![Segment::new("d", "a", None, Domain::Gtc)]).unwrap();
        assert!(segment_documents(&c, 0, &cfg()).is_err());
    }

    #[test]
    fn split_fraction_matches_count() {
        // 10 of 100 documents exceed the limit of 20 tokens
        let segs: Vec<Segment> = (0..100)
            .map(|i| {
                let n = if i % 10 == 3 { 20 + 1 + (i % 7) * 9 } else { 5 + i % 15 };
                Segment::new(format!("d{i}"), words(n), Some((i % 2) as u8), Domain::Synthetic)
            })
            .collect();
        let c = Corpus::from_segments(segs).unwrap();
        let out = segment_documents(&c, 20, &cfg()).unwrap();
        // scripted count: each long doc contributes ceil(n / 20) children
        let mut expected_children = 0;
        for i in 0..100 {
            if i % 10 == 3 {
                expected_children += (20 + 1 + (i % 7) * 9usize).div_ceil(20);
            }
        }
        let with_parent = out.iter().filter(|s| s.parent_id.is_some()).count();
        assert_eq!(with_parent, expected_children);
        assert_eq!(out.len(), 90 + expected_children);
    }

    proptest! {
        #[test]
        fn reassembly_recovers_tokens(
            docs in proptest::collection::vec("[a-zA-Z ,.!'\n]{0,200}", 1..6),
            max in 1usize..12,
        ) {
            let segs: Vec<Segment> = docs.iter().enumerate()
                .filter(|(_, t)| !t.trim().is_empty())
                .map(|(i, t)| Segment::new(format!("p{i}"), t.clone(), Some(1), Domain::Synthetic))
                .collect();
            prop_assume!(!segs.is_empty());
            let c = Corpus::from_segments(segs).unwrap();
            let out = segment_documents(&c, max, &cfg()).unwrap();
            let mut rebuilt: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for s in &out {
                let toks = s.tokens();
                prop_assert!(toks.len() <= max);
                let key = s.parent_id.clone().unwrap_or_else(|| s.id.clone());
                rebuilt.entry(key).or_default().extend(toks);
            }
            for s in &c {
                prop_assert_eq!(&rebuilt[&s.id], &tokenize(&s.text, &cfg()));
            }
        }
    }
}
