use ptfa_core::analytics::{compute_metrics, TranscriptMetrics};
use ptfa_core::store::{parse_dataset, records_to_jsonl, DatasetRecord};
use ptfa_core::{Author, FacilitationModel, Hat, Phase, TopicId};
use proptest::prelude::*;
use serde_json::Value;

const GOLDEN: &str = include_str!("fixtures/golden_transcript.jsonl");
const GOLDEN_EXPECTED: &str = include_str!("fixtures/golden_metrics.json");

#[test]
fn golden_transcript() {
    let m = compute_metrics(&[("golden_transcript.jsonl", GOLDEN)]).unwrap();
    assert_eq!(m.total_posts, 6);
    assert_eq!(m.total_words, 24);
    assert_eq!(m.facilitator_words, 12);
    let got = serde_json::to_value(&m).unwrap();
    let want: Value = serde_json::from_str(GOLDEN_EXPECTED).unwrap();
    assert_eq!(got, want);
}

#[test]
fn golden_round_trips_through_the_exporter() {
    let records = parse_dataset(GOLDEN).unwrap();
    assert_eq!(records_to_jsonl(&records), GOLDEN);
}

fn arb_session(id: String) -> impl Strategy<Value = Vec<DatasetRecord>> {
    let model = prop_oneof![Just(FacilitationModel::Model0), Just(FacilitationModel::Model1)];
    let post = (0u8..3, 0usize..6, 1u64..40_000, "[a-z]{1,6}( [a-z]{1,6}){0,7}");
    (model, prop::collection::vec(post, 0..30)).prop_map(move |(model, posts)| {
        let mut ts = 0;
        posts
            .into_iter()
            .enumerate()
            .map(|(i, (kind, hat, dt, text))| {
                ts += dt;
                let (author_id, hat) = match kind {
                    0 => (Author::Facilitator, (model == FacilitationModel::Model1).then_some(Hat::ALL[hat])),
                    1 => (Author::System, None),
                    _ => (Author::Participant(ptfa_core::ParticipantId::numbered(hat as u32 % 3 + 1)), None),
                };
                DatasetRecord {
                    session_id: id.clone(),
                    seq: i as u64 + 1,
                    ts_ms: ts,
                    author_id,
                    hat,
                    phase: if ts < 600_000 { Phase::Divergent } else { Phase::Convergent },
                    model,
                    topic_id: TopicId::Topic1,
                    text,
                }
            })
            .collect()
    })
}

fn arb_files() -> impl Strategy<Value = Vec<Vec<DatasetRecord>>> {
    (1usize..6).prop_flat_map(|n| (0..n).map(|i| arb_session(format!("s{i}"))).collect::<Vec<_>>())
}

fn as_files(sessions: &[Vec<DatasetRecord>]) -> Vec<(String, String)> {
    sessions
        .iter()
        .enumerate()
        .map(|(i, recs)| (format!("f{i}.jsonl"), records_to_jsonl(recs)))
        .collect()
}

proptest! {
    #[test]
    fn metrics_are_additive_over_disjoint_files(sessions in arb_files()) {
        let files = as_files(&sessions);
        let whole = compute_metrics(&files).unwrap();
        let summed = files
            .iter()
            .map(|f| compute_metrics(std::slice::from_ref(f)).unwrap())
            .fold(TranscriptMetrics::default(), |a, b| a + b);
        prop_assert_eq!(&whole, &summed);
        prop_assert_eq!(whole.words_per_participant.values().sum::<u64>(), whole.total_words);
        prop_assert_eq!(whole.posts_per_hat.values().sum::<u64>() <= whole.facilitator_posts, true);
    }

    #[test]
    fn file_order_does_not_matter(sessions in arb_files()) {
        let mut files = as_files(&sessions);
        let forward = compute_metrics(&files).unwrap();
        files.reverse();
        prop_assert_eq!(forward, compute_metrics(&files).unwrap());
    }
}
