//! Expert and offline datasets: generation under the sub-sampling protocol and
//! JSON Lines persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{rng_from_seed, rollout_one, Environment, Policy, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Expert,
    Offline,
}

/// Header line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: DatasetKind,
    pub env: String,
    pub seed: u64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertRecord<S, A> {
    pub s: S,
    pub a: A,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineRecord<S, A> {
    pub s: S,
    pub a: A,
    pub sp: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertDataset<S, A> {
    pub meta: DatasetMeta,
    pub pairs: Vec<ExpertRecord<S, A>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset<S, A> {
    pub meta: DatasetMeta,
    pub triples: Vec<OfflineRecord<S, A>>,
}

pub type TabularExpert = ExpertDataset<usize, usize>;
pub type TabularOffline = OfflineDataset<usize, usize>;
pub type VectorExpert = ExpertDataset<Vec<f64>, Vec<f64>>;
pub type VectorOffline = OfflineDataset<Vec<f64>, Vec<f64>>;

impl<S, A> ExpertDataset<S, A> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

impl<S, A> OfflineDataset<S, A> {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// The `(s, a)` marginal viewed as expert-style pairs.
    pub fn state_actions(&self) -> Vec<ExpertRecord<S, A>>
    where
        S: Clone,
        A: Clone,
    {
        self.triples
            .iter()
            .map(|t| ExpertRecord {
                s: t.s.clone(),
                a: t.a.clone(),
            })
            .collect()
    }
}

/// Roll out `pool_trajectories` episodes under the expert and sub-sample `n_e`
/// pairs from the pool (without replacement unless `n_e` exceeds the pool).
pub fn generate_expert<E, P>(
    env: &E,
    expert: &P,
    n_e: usize,
    pool_trajectories: usize,
    seed: u64,
    env_id: &str,
) -> Result<ExpertDataset<E::State, E::Action>>
where
    E: Environment,
    P: Policy<E::State, E::Action> + ?Sized,
{
    if pool_trajectories == 0 || env.horizon() == 0 {
        return Err(invalid("expert pool is empty"));
    }
    if n_e == 0 {
        return Err(invalid("n_e must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut pool = Vec::with_capacity(pool_trajectories * env.horizon());
    for _ in 0..pool_trajectories {
        for step in rollout_one(env, expert, &mut rng).steps {
            pool.push(ExpertRecord {
                s: step.state,
                a: step.action,
            });
        }
    }
    let pairs = subsample(&pool, n_e, &mut rng);
    Ok(ExpertDataset {
        meta: DatasetMeta {
            kind: DatasetKind::Expert,
            env: env_id.to_string(),
            seed,
            n: pairs.len(),
            policy: None,
        },
        pairs,
    })
}

fn subsample<T: Clone>(pool: &[T], n: usize, rng: &mut SimRng) -> Vec<T> {
    if n <= pool.len() {
        sample(rng, pool.len(), n).into_iter().map(|i| pool[i].clone()).collect()
    } else {
        (0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect()
    }
}

/// All pairs of one full expert episode, in order.
pub fn single_trajectory_expert<E, P>(
    env: &E,
    expert: &P,
    seed: u64,
    env_id: &str,
) -> ExpertDataset<E::State, E::Action>
where
    E: Environment,
    P: Policy<E::State, E::Action> + ?Sized,
{
    let mut rng = rng_from_seed(seed);
    let pairs: Vec<_> = rollout_one(env, expert, &mut rng)
        .steps
        .into_iter()
        .map(|s| ExpertRecord {
            s: s.state,
            a: s.action,
        })
        .collect();
    ExpertDataset {
        meta: DatasetMeta {
            kind: DatasetKind::Expert,
            env: env_id.to_string(),
            seed,
            n: pairs.len(),
            policy: None,
        },
        pairs,
    }
}

/// Pool `(s, a, s')` triples from full behavior episodes until `n_o` are collected.
pub fn generate_offline<E, P>(
    env: &E,
    behavior: &P,
    n_o: usize,
    seed: u64,
    env_id: &str,
) -> Result<OfflineDataset<E::State, E::Action>>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    generate_offline_mixture(env, &[(1.0, behavior as &dyn Policy<E::State, E::Action>)], n_o, seed, env_id)
}

/// A behavior policy and its mixture weight.
pub type MixtureComponent<'a, S, A> = (f64, &'a dyn Policy<S, A>);

/// Like [`generate_offline`], but each episode is run by a policy drawn from
/// `components` with probability proportional to its weight.
pub fn generate_offline_mixture<E>(
    env: &E,
    components: &[MixtureComponent<'_, E::State, E::Action>],
    n_o: usize,
    seed: u64,
    env_id: &str,
) -> Result<OfflineDataset<E::State, E::Action>>
where
    E: Environment,
{
    if n_o == 0 {
        return Err(invalid("n_o must be at least 1"));
    }
    if components.is_empty() || components.iter().any(|(w, _)| !(*w >= 0.0)) {
        return Err(invalid("mixture needs nonnegative weights"));
    }
    let total: f64 = components.iter().map(|(w, _)| w).sum();
    if !(total > 0.0) {
        return Err(invalid("mixture weights sum to zero"));
    }
    let mut rng = rng_from_seed(seed);
    let mut triples = Vec::with_capacity(n_o);
    while triples.len() < n_o {
        let pick = if components.len() == 1 {
            0
        } else {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut k = components.len() - 1;
            for (i, (w, _)) in components.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = i;
                    break;
                }
            }
            k
        };
        let traj = rollout_one(env, components[pick].1, &mut rng);
        for step in traj.steps {
            if triples.len() == n_o {
                break;
            }
            triples.push(OfflineRecord {
                s: step.state,
                a: step.action,
                sp: step.next_state,
            });
        }
    }
    Ok(OfflineDataset {
        meta: DatasetMeta {
            kind: DatasetKind::Offline,
            env: env_id.to_string(),
            seed,
            n: n_o,
            policy: None,
        },
        triples,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, meta: &DatasetMeta, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, meta)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, expect: DatasetKind) -> Result<(DatasetMeta, Vec<T>)> {
    let reader = BufReader::new(File::open(path)?);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut meta: Option<DatasetMeta> = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match &meta {
            None => {
                let m: DatasetMeta =
                    serde_json::from_str(&line).map_err(|e| parse_err(lineno, format!("bad header: {e}")))?;
                if m.kind != expect {
                    return Err(parse_err(lineno, format!("expected a {expect:?} dataset, found {:?}", m.kind)));
                }
                meta = Some(m);
            }
            Some(_) => records.push(serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?),
        }
    }
    let meta = meta.ok_or_else(|| Error::EmptyDataset {
        path: path.to_path_buf(),
    })?;
    if records.is_empty() {
        return Err(Error::EmptyDataset {
            path: path.to_path_buf(),
        });
    }
    if records.len() != meta.n {
        return Err(parse_err(1, format!("header says n = {} but file has {} records", meta.n, records.len())));
    }
    Ok((meta, records))
}

impl<S: Serialize + DeserializeOwned, A: Serialize + DeserializeOwned> ExpertDataset<S, A> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path.as_ref(), &self.meta, &self.pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (meta, pairs) = read_jsonl(path.as_ref(), DatasetKind::Expert)?;
        Ok(Self { meta, pairs })
    }
}

impl<S: Serialize + DeserializeOwned, A: Serialize + DeserializeOwned> OfflineDataset<S, A> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path.as_ref(), &self.meta, &self.triples)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (meta, triples) = read_jsonl(path.as_ref(), DatasetKind::Offline)?;
        Ok(Self { meta, triples })
    }
}

/// Empirical `(s, a)` frequencies of tabular pairs.
pub fn empirical_distribution<'a>(
    pairs: impl IntoIterator<Item = (&'a usize, &'a usize)>,
    n_states: usize,
    n_actions: usize,
) -> Vec<f64> {
    let mut d = vec![0.0; n_states * n_actions];
    let mut n = 0usize;
    for (&s, &a) in pairs {
        d[s * n_actions + a] += 1.0;
        n += 1;
    }
    if n > 0 {
        d.iter_mut().for_each(|x| *x /= n as f64);
    }
    d
}

impl TabularExpert {
    pub fn distribution(&self, n_states: usize, n_actions: usize) -> Vec<f64> {
        empirical_distribution(self.pairs.iter().map(|p| (&p.s, &p.a)), n_states, n_actions)
    }
}

impl TabularOffline {
    pub fn distribution(&self, n_states: usize, n_actions: usize) -> Vec<f64> {
        empirical_distribution(self.triples.iter().map(|p| (&p.s, &p.a)), n_states, n_actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{chain, random_mdp, TabularPolicy};

    #[test]
    fn exhaustive_subsample_is_a_permutation() {
        let mdp = chain(4, 5, 0.3).unwrap();
        let pi = TabularPolicy::uniform(4, 2);
        let d = generate_expert(&mdp, &pi, 15, 3, 9, "chain").unwrap();
        let mut rng = rng_from_seed(9);
        let mut pool: Vec<(usize, usize)> = Vec::new();
        for _ in 0..3 {
            pool.extend(rollout_one(&mdp, &pi, &mut rng).steps.iter().map(|s| (s.state, s.action)));
        }
        let mut got: Vec<(usize, usize)> = d.pairs.iter().map(|p| (p.s, p.a)).collect();
        pool.sort();
        got.sort();
        assert_eq!(pool, got);
    }

    #[test]
    fn oversampling_uses_replacement() {
        let mdp = chain(3, 2, 0.0).unwrap();
        let pi = TabularPolicy::deterministic(2, &[1, 1, 1]).unwrap();
        let d = generate_expert(&mdp, &pi, 10, 1, 0, "chain").unwrap();
        assert_eq!(d.len(), 10);
    }

    #[test]
    fn deterministic_chain_triples_follow_dynamics() {
        let mdp = chain(5, 6, 0.0).unwrap();
        let pi = TabularPolicy::deterministic(2, &[1, 0, 1, 1, 0]).unwrap();
        let d = generate_offline(&mdp, &pi, 13, 4, "chain").unwrap();
        assert_eq!(d.len(), 13);
        for t in &d.triples {
            let expected = if t.s == 4 { 4 } else if t.a == 1 { t.s + 1 } else { t.s.saturating_sub(1) };
            assert_eq!(t.sp, expected);
        }
        let one = generate_offline(&mdp, &pi, 1, 4, "chain").unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn single_trajectory_has_horizon_pairs() {
        let mdp = chain(3, 3, 0.0).unwrap();
        let pi = TabularPolicy::deterministic(2, &[1, 1, 1]).unwrap();
        let d = single_trajectory_expert(&mdp, &pi, 1, "chain");
        let got: Vec<(usize, usize)> = d.pairs.iter().map(|p| (p.s, p.a)).collect();
        assert_eq!(got, vec![(0, 1), (1, 1), (2, 1)]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let mut rng = rng_from_seed(2);
        let mdp = random_mdp(4, 2, 5, &mut rng).unwrap();
        let pi = TabularPolicy::uniform(4, 2);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        generate_offline(&mdp, &pi, 50, 3, "r").unwrap().save(&a).unwrap();
        generate_offline(&mdp, &pi, 50, 3, "r").unwrap().save(&b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn round_trip_vector_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rng_from_seed(5);
        for k in 0..3 {
            let triples: Vec<_> = (0..7)
                .map(|_| OfflineRecord {
                    s: vec![rng.random::<f64>() * 1e3, -rng.random::<f64>()],
                    a: vec![rng.random::<f64>() / 3.0],
                    sp: vec![rng.random::<f64>(), 1e-300 * rng.random::<f64>()],
                })
                .collect();
            let d = VectorOffline {
                meta: DatasetMeta {
                    kind: DatasetKind::Offline,
                    env: "lin".into(),
                    seed: k,
                    n: 7,
                    policy: Some("behavior".into()),
                },
                triples,
            };
            let p = dir.path().join(format!("{k}.jsonl"));
            d.save(&p).unwrap();
            assert_eq!(VectorOffline::load(&p).unwrap(), d);
        }
    }

    #[test]
    fn load_errors_are_specific() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(TabularExpert::load(&empty), Err(Error::EmptyDataset { .. })));

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(
            &bad,
            "{\"kind\":\"expert\",\"env\":\"g\",\"seed\":1,\"n\":3}\n{\"s\":1,\"a\":0}\n{\"s\":1,\"a\":\n{\"s\":2,\"a\":1}\n",
        )
        .unwrap();
        match TabularExpert::load(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let wrong_kind = dir.path().join("kind.jsonl");
        std::fs::write(&wrong_kind, "{\"kind\":\"offline\",\"env\":\"g\",\"seed\":1,\"n\":1}\n{\"s\":1,\"a\":0,\"sp\":1}\n").unwrap();
        assert!(TabularExpert::load(&wrong_kind).is_err());
    }

    #[test]
    fn mixture_rejects_bad_weights() {
        let mdp = chain(2, 2, 0.0).unwrap();
        let pi = TabularPolicy::uniform(2, 2);
        let comps: [(f64, &dyn Policy<usize, usize>); 1] = [(0.0, &pi)];
        assert!(generate_offline_mixture(&mdp, &comps, 3, 0, "c").is_err());
    }
}
