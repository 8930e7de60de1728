//! Periodic elimination: the lowest-market-cap token's pool ETH buys the
//! leader and the bought tokens go pro-rata to the eliminated token's
//! vault holders.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::market::{execute_swap, quote_buy_with, MarketSnapshot, Pool, TokenId, TokenMeta, TokenStats};
use crate::units::{mul_div, Eth, Tokens};
use crate::vault::{Vault, VaultId};
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReapSchedule {
    pub period: Tick,
    pub next_at: Tick,
}

impl ReapSchedule {
    pub fn new(period: Tick, first_at: Tick) -> Self {
        assert!(period > 0, "reap period must be positive");
        ReapSchedule { period, next_at: first_at }
    }

    pub fn is_due(&self, now: Tick) -> bool {
        now == self.next_at
    }

    pub fn advance(&mut self) {
        self.next_at += self.period;
    }

    pub fn countdown(&self, now: Tick) -> Tick {
        self.next_at.saturating_sub(now)
    }
}

/// ETH and tokens owned by the protocol rather than a vault or pool.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolAccounts {
    /// Protocol fees swept from eliminated pools.
    pub treasury: Eth,
    /// Rounding remainders of compensation, per leader token.
    pub dust: BTreeMap<TokenId, Tokens>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReapEvent {
    pub tick: Tick,
    pub eliminated: TokenId,
    pub leader: TokenId,
    pub eth_moved: Eth,
    pub leader_acquired: Tokens,
    pub compensation: Vec<(VaultId, Tokens)>,
    pub dust: Tokens,
    /// Protocol fees the eliminated pool had accrued, moved to the treasury.
    pub fees_swept: Eth,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReapError {
    #[error("reap needs at least two live tokens, found {0}")]
    InsufficientTokens(usize),
    #[error("no pool for {0}")]
    MissingPool(TokenId),
    #[error("source and target are the same token {0}")]
    SamePair(TokenId),
}

fn rank(a: &TokenStats) -> (Tick, &str) {
    (a.launched_at, a.token.as_str())
}

/// Source is the lowest market cap, target the highest; ties go to the
/// earlier launch, then the lexicographically smaller id.
pub fn select_reap_pair(snapshot: &MarketSnapshot) -> Result<(TokenId, TokenId), ReapError> {
    let rows = &snapshot.rows;
    if rows.len() < 2 {
        return Err(ReapError::InsufficientTokens(rows.len()));
    }
    let source = rows.iter().min_by(|a, b| a.market_cap.cmp(&b.market_cap).then_with(|| rank(a).cmp(&rank(b)))).expect("non-empty");
    let target =
        rows.iter().filter(|r| r.token != source.token).min_by(|a, b| b.market_cap.cmp(&a.market_cap).then_with(|| rank(a).cmp(&rank(b)))).expect("two rows");
    Ok((source.token.clone(), target.token.clone()))
}

/// Pro-rata floor split of `total` over `weights`; returns the shares and
/// the remainder, which is below the number of non-zero weights.
pub fn pro_rata(total: Tokens, weights: &[Tokens]) -> (Vec<Tokens>, Tokens) {
    let sum: u128 = weights.iter().map(|w| w.raw()).sum();
    if sum == 0 {
        return (vec![Tokens::ZERO; weights.len()], total);
    }
    let shares: Vec<Tokens> = weights.iter().map(|w| Tokens(mul_div(total.raw(), w.raw(), sum))).collect();
    let paid: u128 = shares.iter().map(|s| s.raw()).sum();
    (shares, Tokens(total.raw() - paid))
}

/// Eliminates `source` into `target`. Protocol fee is waived on the reap
/// swap; the LP fee applies. Vault cost basis in the source carries over
/// to the compensation.
pub fn execute_reap<'a>(
    tokens: &mut BTreeMap<TokenId, TokenMeta>,
    pools: &mut BTreeMap<TokenId, Pool>,
    vaults: impl IntoIterator<Item = &'a mut Vault>,
    protocol: &mut ProtocolAccounts,
    (source, target): (&TokenId, &TokenId),
    now: Tick,
) -> Result<ReapEvent, ReapError> {
    if source == target {
        return Err(ReapError::SamePair(source.clone()));
    }
    if !pools.contains_key(target) {
        return Err(ReapError::MissingPool(target.clone()));
    }
    let src_pool = pools.remove(source).ok_or_else(|| ReapError::MissingPool(source.clone()))?;
    protocol.treasury += src_pool.protocol_fee_accrued;
    let eth_moved = src_pool.eth_reserve;

    let mut holders: Vec<&'a mut Vault> = vaults.into_iter().filter(|v| v.position(source).is_some()).collect();
    holders.sort_by_key(|v| v.id);

    let target_pool = pools.get_mut(target).expect("checked above");
    let fees = target_pool.fees.lp_only();
    let quote = quote_buy_with(target_pool, eth_moved, fees).ok().filter(|_| !holders.is_empty());
    let acquired = match quote {
        Some(q) => {
            execute_swap(target_pool, &q).expect("fresh quote executes");
            q.token_amount
        }
        None => {
            // nothing purchasable or nobody to compensate; the ETH stays with the protocol
            protocol.treasury += eth_moved;
            Tokens::ZERO
        }
    };
    let weights: Vec<Tokens> = holders.iter().map(|v| v.positions[source].balance).collect();
    let (shares, dust) = pro_rata(acquired, &weights);
    let mut compensation = Vec::with_capacity(holders.len());
    for (vault, share) in holders.into_iter().zip(shares) {
        let pos = vault.take_position(source).expect("holder");
        vault.add_tokens(target, share, pos.cost_basis, now);
        compensation.push((vault.id, share));
    }
    if !dust.is_zero() {
        *protocol.dust.entry(target.clone()).or_insert(Tokens::ZERO) += dust;
    }
    if let Some(meta) = tokens.get_mut(source) {
        meta.delisted = true;
    }
    Ok(ReapEvent {
        tick: now,
        eliminated: source.clone(),
        leader: target.clone(),
        eth_moved,
        leader_acquired: acquired,
        compensation,
        dust,
        fees_swept: src_pool.protocol_fee_accrued,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{FeeSchedule, PctChanges, WindowPair};
    use crate::units::Price;

    fn row(sym: &str, cap: u128, launched_at: Tick) -> TokenStats {
        TokenStats {
            token: TokenId::new(sym),
            symbol: sym.into(),
            genesis: launched_at == 0,
            launched_at,
            price: Price::ZERO,
            market_cap: Eth::from_whole(cap),
            age_ticks: 0,
            pct_change: PctChanges::default(),
            volume: WindowPair::default(),
            net_flow: WindowPair::default(),
            holders: 0,
            unique_traders_5m: 0,
        }
    }

    #[test]
    fn pair_selection() {
        let snap = MarketSnapshot { tick: 0, rows: vec![row("A", 5, 0), row("B", 9, 0), row("C", 2, 0)] };
        assert_eq!(select_reap_pair(&snap).unwrap(), (TokenId::new("C"), TokenId::new("B")));
        let tie = MarketSnapshot { tick: 0, rows: vec![row("Z", 2, 3), row("Y", 2, 5), row("X", 9, 0)] };
        assert_eq!(select_reap_pair(&tie).unwrap().0, TokenId::new("Z"));
        let lex = MarketSnapshot { tick: 0, rows: vec![row("Q", 2, 0), row("P", 2, 0)] };
        assert_eq!(select_reap_pair(&lex).unwrap(), (TokenId::new("P"), TokenId::new("Q")));
        let one = MarketSnapshot { tick: 0, rows: vec![row("A", 1, 0)] };
        assert_eq!(select_reap_pair(&one), Err(ReapError::InsufficientTokens(1)));
    }

    #[test]
    fn split_is_exact() {
        let (s, d) = pro_rata(Tokens(1000), &[Tokens(75), Tokens(25)]);
        assert_eq!(s, vec![Tokens(750), Tokens(250)]);
        assert_eq!(d, Tokens::ZERO);
        let (s, d) = pro_rata(Tokens(10), &[Tokens(1), Tokens(1), Tokens(1)]);
        assert_eq!(s, vec![Tokens(3); 3]);
        assert_eq!(d, Tokens(1));
        let (_, d) = pro_rata(Tokens(10), &[]);
        assert_eq!(d, Tokens(10));
    }

    #[test]
    fn reap_without_holders_buys_nothing() {
        let mut tokens = BTreeMap::new();
        let mut pools = BTreeMap::new();
        for (sym, eth) in [("LOW", 5), ("TOP", 50)] {
            let id = TokenId::new(sym);
            tokens.insert(id.clone(), TokenMeta::new(sym, 0));
            pools.insert(id.clone(), Pool::new(id, Eth::from_whole(eth), Tokens::from_whole(1_000_000_000), FeeSchedule::default()));
        }
        let (low, top) = (TokenId::new("LOW"), TokenId::new("TOP"));
        let mut protocol = ProtocolAccounts::default();
        let ev = execute_reap(&mut tokens, &mut pools, Vec::<&mut Vault>::new(), &mut protocol, (&low, &top), 3).unwrap();
        assert_eq!((ev.leader_acquired, ev.dust), (Tokens::ZERO, Tokens::ZERO));
        assert_eq!(protocol.treasury, Eth::from_whole(5));
        assert_eq!(pools[&top].eth_reserve, Eth::from_whole(50));
    }

    #[test]
    fn reap_moves_eth_and_pays_holders() {
        let mut tokens = BTreeMap::new();
        let mut pools = BTreeMap::new();
        for (sym, eth) in [("LOW", 5), ("TOP", 50)] {
            let id = TokenId::new(sym);
            tokens.insert(id.clone(), TokenMeta::new(sym, 0));
            pools.insert(id.clone(), Pool::new(id, Eth::from_whole(eth), Tokens::from_whole(1_000_000_000), FeeSchedule::default()));
        }
        pools.get_mut(&TokenId::new("LOW")).unwrap().protocol_fee_accrued = Eth::from_whole(1);
        let low = TokenId::new("LOW");
        let top = TokenId::new("TOP");
        let mut a = Vault::new(VaultId(1), "a", 0);
        let mut b = Vault::new(VaultId(2), "b", 0);
        a.add_tokens(&low, Tokens::from_whole(300), Eth::from_whole(3), 0);
        b.add_tokens(&low, Tokens::from_whole(100), Eth::from_whole(1), 0);
        let residual = a.accounting_residual();
        let mut protocol = ProtocolAccounts::default();
        let eth_before: Eth = pools.values().map(|p| p.eth_reserve + p.protocol_fee_accrued).sum();
        let ev = execute_reap(&mut tokens, &mut pools, [&mut a, &mut b], &mut protocol, (&low, &top), 7).unwrap();
        let eth_after: Eth = pools.values().map(|p| p.eth_reserve + p.protocol_fee_accrued).sum::<Eth>() + protocol.treasury;
        assert_eq!(eth_before, eth_after);
        assert_eq!(ev.eth_moved, Eth::from_whole(5));
        let paid: u128 = ev.compensation.iter().map(|(_, t)| t.raw()).sum();
        assert_eq!(paid + ev.dust.raw(), ev.leader_acquired.raw());
        assert!(ev.dust.raw() < 2);
        assert_eq!(ev.compensation[0].1.raw() / 3, ev.compensation[1].1.raw());
        assert!(a.position(&low).is_none() && b.position(&low).is_none());
        assert_eq!(a.positions[&top].cost_basis, Eth::from_whole(3));
        assert_eq!(a.accounting_residual(), residual);
        assert!(tokens[&low].delisted && !pools.contains_key(&low));
    }
}
