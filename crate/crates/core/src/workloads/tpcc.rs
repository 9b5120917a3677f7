use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{line_addr, Tokens, WorkloadError};
use crate::sched::{Op, Program, TxBody};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TxType {
    StockLevel,
    Delivery,
    OrderStatus,
    Payment,
    NewOrder,
}

impl TxType {
    pub const ALL: [TxType; 5] = [
        TxType::StockLevel,
        TxType::Delivery,
        TxType::OrderStatus,
        TxType::Payment,
        TxType::NewOrder,
    ];

    pub fn is_read_only(self) -> bool {
        matches!(self, TxType::StockLevel | TxType::OrderStatus)
    }
}

/// Transaction mix in percent, in `s d o p r` order: stock-level,
/// delivery, order-status, payment, new-order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mix(pub [u32; 5]);

impl Mix {
    pub const STANDARD: Mix = Mix([4, 4, 4, 43, 45]);
    pub const READ_DOMINATED: Mix = Mix([4, 4, 80, 4, 8]);

    pub fn new(s: u32, d: u32, o: u32, p: u32, r: u32) -> Result<Self, WorkloadError> {
        let m = Mix([s, d, o, p, r]);
        if m.0.iter().sum::<u32>() != 100 {
            return Err(WorkloadError::param(format!("mix {m} does not sum to 100")));
        }
        Ok(m)
    }

    pub fn pct(&self, t: TxType) -> u32 {
        self.0[TxType::ALL.iter().position(|&x| x == t).unwrap()]
    }

    /// `standard`, `read`, or five colon-separated percentages.
    pub fn parse(s: &str) -> Result<Self, WorkloadError> {
        match s {
            "standard" => Ok(Mix::STANDARD),
            "read" | "read-dominated" => Ok(Mix::READ_DOMINATED),
            _ => {
                let v: Vec<u32> = s
                    .split(':')
                    .map(|x| x.parse().map_err(|_| WorkloadError::param(format!("bad mix `{s}`"))))
                    .collect::<Result<_, _>>()?;
                match v[..] {
                    [a, b, c, d, e] => Mix::new(a, b, c, d, e),
                    _ => Err(WorkloadError::param(format!("mix `{s}` needs five percentages"))),
                }
            }
        }
    }

    fn pick(&self, roll: u32) -> TxType {
        let mut acc = 0;
        for (t, &p) in TxType::ALL.iter().zip(&self.0) {
            acc += p;
            if roll < acc {
                return *t;
            }
        }
        unreachable!("mix sums to 100")
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Mix::STANDARD => f.write_str("standard"),
            Mix::READ_DOMINATED => f.write_str("read"),
            Mix([s, d, o, p, r]) => write!(f, "{s}:{d}:{o}:{p}:{r}"),
        }
    }
}

/// Row counts, reduced from the real benchmark.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TpccScale {
    pub districts: usize,
    pub customers: usize,
    pub items: usize,
    pub initial_orders: usize,
    /// Order rows kept per district before slots are reused.
    pub order_slots: usize,
    pub min_lines: usize,
    pub max_lines: usize,
    pub stock_level_orders: usize,
    pub history_slots: usize,
}

impl Default for TpccScale {
    fn default() -> Self {
        TpccScale {
            districts: 10,
            customers: 30,
            items: 1000,
            initial_orders: 30,
            order_slots: 64,
            min_lines: 5,
            max_lines: 15,
            stock_level_orders: 20,
            history_slots: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TpccParams {
    pub mix: Mix,
    pub warehouses: usize,
    pub n_threads: usize,
    pub ops_per_thread: usize,
    pub seed: u64,
    /// Chance (percent) that a payment's customer is in another warehouse.
    pub remote_pct: u32,
    pub scale: TpccScale,
}

impl TpccParams {
    /// Low contention gives each thread its own warehouse; high contention
    /// puts everyone in one.
    pub fn new(mix: Mix, n_threads: usize, high_contention: bool) -> Self {
        TpccParams {
            mix,
            warehouses: if high_contention { 1 } else { n_threads.max(1) },
            n_threads,
            ops_per_thread: 1000,
            seed: 1,
            remote_pct: 15,
            scale: TpccScale::default(),
        }
    }
}

struct Layout {
    s: TpccScale,
    warehouse: u64,
    district: u64,
    customer: u64,
    item: u64,
    stock: u64,
    order: u64,
    order_line: u64,
    new_order: u64,
    history: u64,
}

impl Layout {
    fn new(w: usize, s: &TpccScale) -> Self {
        let d = (w * s.districts) as u64;
        let mut next = 0u64;
        let mut region = |rows: u64| {
            let base = next;
            next += rows;
            base
        };
        Layout {
            warehouse: region(w as u64),
            district: region(d),
            customer: region(d * s.customers as u64),
            item: region(s.items as u64),
            stock: region((w * s.items) as u64),
            order: region(d * s.order_slots as u64),
            order_line: region(d * (s.order_slots * s.max_lines) as u64),
            new_order: region(d * s.order_slots as u64),
            history: region((w * s.history_slots) as u64),
            s: s.clone(),
        }
    }

    fn dist(&self, w: usize, d: usize) -> u64 {
        (w * self.s.districts + d) as u64
    }

    fn warehouse(&self, w: usize) -> Op {
        Op::Read(line_addr(self.warehouse + w as u64))
    }

    fn district(&self, w: usize, d: usize) -> u64 {
        line_addr(self.district + self.dist(w, d))
    }

    fn customer(&self, w: usize, d: usize, c: usize) -> u64 {
        line_addr(self.customer + self.dist(w, d) * self.s.customers as u64 + c as u64)
    }

    fn item(&self, i: usize) -> u64 {
        line_addr(self.item + i as u64)
    }

    fn stock(&self, w: usize, i: usize) -> u64 {
        line_addr(self.stock + (w * self.s.items + i) as u64)
    }

    fn slot(&self, w: usize, d: usize, o: u64) -> u64 {
        self.dist(w, d) * self.s.order_slots as u64 + o % self.s.order_slots as u64
    }

    fn order(&self, w: usize, d: usize, o: u64) -> u64 {
        line_addr(self.order + self.slot(w, d, o))
    }

    fn order_line(&self, w: usize, d: usize, o: u64, j: usize) -> u64 {
        line_addr(self.order_line + self.slot(w, d, o) * self.s.max_lines as u64 + j as u64)
    }

    fn new_order(&self, w: usize, d: usize, o: u64) -> u64 {
        line_addr(self.new_order + self.slot(w, d, o))
    }

    fn history(&self, w: usize, k: usize) -> u64 {
        line_addr(self.history + (w * self.s.history_slots + k % self.s.history_slots) as u64)
    }
}

struct Order {
    customer: usize,
    items: Vec<usize>,
}

#[derive(Default)]
struct District {
    next_o_id: u64,
    orders: HashMap<u64, Order>,
    undelivered: VecDeque<u64>,
    last_order: HashMap<usize, u64>,
}

struct Gen<'p> {
    p: &'p TpccParams,
    l: Layout,
    rng: ChaCha8Rng,
    tokens: Tokens,
    districts: Vec<District>,
    history_next: Vec<usize>,
}

impl Gen<'_> {
    fn rw(&mut self, ops: &mut Vec<Op>, addr: u64) {
        ops.push(Op::Read(addr));
        ops.push(Op::Write(addr, self.tokens.next()));
    }

    fn write(&mut self, ops: &mut Vec<Op>, addr: u64) {
        ops.push(Op::Write(addr, self.tokens.next()));
    }

    fn district_mut(&mut self, w: usize, d: usize) -> &mut District {
        &mut self.districts[w * self.p.scale.districts + d]
    }

    fn new_order(&mut self, w: usize) -> Vec<Op> {
        let s = &self.p.scale;
        let d = self.rng.gen_range(0..s.districts);
        let c = self.rng.gen_range(0..s.customers);
        let n = self.rng.gen_range(s.min_lines..=s.max_lines);
        let items = sample(&mut self.rng, s.items, n).into_vec();
        let mut ops = vec![self.l.warehouse(w)];
        let dist = self.l.district(w, d);
        self.rw(&mut ops, dist);
        ops.push(Op::Read(self.l.customer(w, d, c)));
        for &i in &items {
            ops.push(Op::Read(self.l.item(i)));
            let stock = self.l.stock(w, i);
            self.rw(&mut ops, stock);
        }
        let dm = self.district_mut(w, d);
        let o = dm.next_o_id;
        dm.next_o_id += 1;
        dm.undelivered.push_back(o);
        dm.last_order.insert(c, o);
        let (order, new_order) = (self.l.order(w, d, o), self.l.new_order(w, d, o));
        self.write(&mut ops, order);
        self.write(&mut ops, new_order);
        for j in 0..items.len() {
            let ol = self.l.order_line(w, d, o, j);
            self.write(&mut ops, ol);
        }
        self.district_mut(w, d).orders.insert(o, Order { customer: c, items });
        ops
    }

    fn payment(&mut self, w: usize) -> Vec<Op> {
        let s = &self.p.scale;
        let d = self.rng.gen_range(0..s.districts);
        let (cw, cd) = if self.p.warehouses > 1 && self.rng.gen_range(0..100) < self.p.remote_pct {
            let other = (w + self.rng.gen_range(1..self.p.warehouses)) % self.p.warehouses;
            (other, self.rng.gen_range(0..s.districts))
        } else {
            (w, d)
        };
        let c = self.rng.gen_range(0..s.customers);
        let mut ops = Vec::new();
        let wh = line_addr(self.l.warehouse + w as u64);
        self.rw(&mut ops, wh);
        let dist = self.l.district(w, d);
        self.rw(&mut ops, dist);
        let cust = self.l.customer(cw, cd, c);
        self.rw(&mut ops, cust);
        let k = self.history_next[w];
        self.history_next[w] += 1;
        let h = self.l.history(w, k);
        self.write(&mut ops, h);
        ops
    }

    fn order_status(&mut self, w: usize) -> Vec<Op> {
        let s = &self.p.scale;
        let d = self.rng.gen_range(0..s.districts);
        let c = self.rng.gen_range(0..s.customers);
        let mut ops = vec![Op::Read(self.l.customer(w, d, c))];
        let dm = &self.districts[w * s.districts + d];
        if let Some(&o) = dm.last_order.get(&c) {
            ops.push(Op::Read(self.l.order(w, d, o)));
            for j in 0..dm.orders[&o].items.len() {
                ops.push(Op::Read(self.l.order_line(w, d, o, j)));
            }
        }
        ops
    }

    fn delivery(&mut self, w: usize) -> Vec<Op> {
        let mut ops = Vec::new();
        for d in 0..self.p.scale.districts {
            let Some(o) = self.district_mut(w, d).undelivered.pop_front() else {
                continue;
            };
            let dm = &self.districts[w * self.p.scale.districts + d];
            let (c, n) = (dm.orders[&o].customer, dm.orders[&o].items.len());
            for addr in [self.l.new_order(w, d, o), self.l.order(w, d, o)] {
                self.rw(&mut ops, addr);
            }
            for j in 0..n {
                let ol = self.l.order_line(w, d, o, j);
                self.rw(&mut ops, ol);
            }
            let cust = self.l.customer(w, d, c);
            self.rw(&mut ops, cust);
        }
        ops
    }

    fn stock_level(&mut self, w: usize) -> Vec<Op> {
        let s = &self.p.scale;
        let d = self.rng.gen_range(0..s.districts);
        let mut ops = vec![Op::Read(self.l.district(w, d))];
        let dm = &self.districts[w * s.districts + d];
        let first = dm.next_o_id.saturating_sub(s.stock_level_orders as u64);
        let mut items = BTreeSet::new();
        for o in first..dm.next_o_id {
            if let Some(order) = dm.orders.get(&o) {
                for (j, &i) in order.items.iter().enumerate() {
                    ops.push(Op::Read(self.l.order_line(w, d, o, j)));
                    items.insert(i);
                }
            }
        }
        ops.extend(items.into_iter().map(|i| Op::Read(self.l.stock(w, i))));
        ops
    }
}

/// TPC-C-lite: five transaction types over row-per-line tables. Order
/// status and stock level are declared read-only.
pub fn tpcc_program(p: &TpccParams) -> Result<Program, WorkloadError> {
    let s = &p.scale;
    if p.n_threads == 0 || p.warehouses == 0 {
        return Err(WorkloadError::param("need at least one thread and one warehouse"));
    }
    if s.districts == 0 || s.customers == 0 || s.min_lines == 0 || s.min_lines > s.max_lines {
        return Err(WorkloadError::param("degenerate scale"));
    }
    if s.max_lines > s.items {
        return Err(WorkloadError::param("an order cannot have more lines than there are items"));
    }
    Mix::new(p.mix.0[0], p.mix.0[1], p.mix.0[2], p.mix.0[3], p.mix.0[4])?;

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut districts = Vec::with_capacity(p.warehouses * s.districts);
    for _ in 0..p.warehouses * s.districts {
        let mut dm = District::default();
        for o in 0..s.initial_orders as u64 {
            let c = o as usize % s.customers;
            let n = rng.gen_range(s.min_lines..=s.max_lines);
            let items = sample(&mut rng, s.items, n).into_vec();
            dm.orders.insert(o, Order { customer: c, items });
            dm.last_order.insert(c, o);
            if o * 10 >= s.initial_orders as u64 * 7 {
                dm.undelivered.push_back(o);
            }
        }
        dm.next_o_id = s.initial_orders as u64;
        districts.push(dm);
    }
    let mut g = Gen {
        p,
        l: Layout::new(p.warehouses, s),
        rng,
        tokens: Tokens::default(),
        districts,
        history_next: vec![0; p.warehouses],
    };
    let mut threads = vec![Vec::with_capacity(p.ops_per_thread); p.n_threads];
    for _ in 0..p.ops_per_thread {
        for (tid, txs) in threads.iter_mut().enumerate() {
            let w = tid % p.warehouses;
            let roll = g.rng.gen_range(0..100);
            let t = p.mix.pick(roll);
            let ops = match t {
                TxType::StockLevel => g.stock_level(w),
                TxType::Delivery => g.delivery(w),
                TxType::OrderStatus => g.order_status(w),
                TxType::Payment => g.payment(w),
                TxType::NewOrder => g.new_order(w),
            };
            txs.push(TxBody { ops, is_ro: t.is_read_only() });
        }
    }
    Ok(Program::new(threads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixes() {
        assert_eq!(Mix::parse("standard").unwrap(), Mix::new(4, 4, 4, 43, 45).unwrap());
        assert_eq!(Mix::parse("read").unwrap(), Mix::READ_DOMINATED);
        assert_eq!(Mix::parse("10:10:20:30:30").unwrap().pct(TxType::OrderStatus), 20);
        assert!(Mix::parse("10:10:10:10:10").is_err());
        assert!(Mix::parse("1:2").is_err());
        assert_eq!(Mix::READ_DOMINATED.to_string(), "read");
        assert_eq!(Mix::parse(&Mix([1, 2, 3, 4, 90]).to_string()).unwrap(), Mix([1, 2, 3, 4, 90]));
    }

    fn only(t: TxType) -> TpccParams {
        let mut m = [0; 5];
        m[TxType::ALL.iter().position(|&x| x == t).unwrap()] = 100;
        TpccParams { ops_per_thread: 50, ..TpccParams::new(Mix(m), 2, false) }
    }

    fn mean_footprint(t: TxType) -> (f64, f64) {
        let prog = tpcc_program(&only(t)).unwrap();
        prog.validate().unwrap();
        let txs: Vec<_> = prog.threads.iter().flatten().collect();
        assert!(txs.iter().all(|tx| tx.is_ro == t.is_read_only()));
        let n = txs.len() as f64;
        let reads = txs.iter().map(|tx| tx.ops.iter().filter(|o| !o.is_write()).count()).sum::<usize>();
        let writes = txs.iter().map(|tx| tx.ops.iter().filter(|o| o.is_write()).count()).sum::<usize>();
        (reads as f64 / n, writes as f64 / n)
    }

    #[test]
    fn footprints() {
        let (r, _) = mean_footprint(TxType::StockLevel);
        assert!(r > 300.0, "stock level reads {r}");
        // With nothing but deliveries the backlog drains; the first one
        // per warehouse delivers a full order in every district.
        let prog = tpcc_program(&only(TxType::Delivery)).unwrap();
        for txs in &prog.threads {
            let w = txs[0].ops.iter().filter(|o| o.is_write()).count();
            assert!(w > 100, "delivery writes {w}");
        }
        let (r, _) = mean_footprint(TxType::OrderStatus);
        assert!((5.0..20.0).contains(&r), "order status reads {r}");
        let (_, w) = mean_footprint(TxType::Payment);
        assert_eq!(w, 4.0);
        let (_, w) = mean_footprint(TxType::NewOrder);
        assert!((10.0..40.0).contains(&w), "new order writes {w}");
    }

    #[test]
    fn deterministic_and_mix_respected() {
        let p = TpccParams { ops_per_thread: 500, ..TpccParams::new(Mix::READ_DOMINATED, 4, false) };
        let a = tpcc_program(&p).unwrap();
        assert_eq!(a, tpcc_program(&p).unwrap());
        let ro = a.threads.iter().flatten().filter(|t| t.is_ro).count() as f64;
        let frac = ro / a.n_transactions() as f64;
        assert!((frac - 0.84).abs() < 0.04, "{frac}");
    }

    #[test]
    fn low_contention_threads_stay_home() {
        let p = TpccParams { remote_pct: 0, ..only(TxType::Payment) };
        let prog = tpcc_program(&p).unwrap();
        let l = Layout::new(2, &p.scale);
        let wh0 = line_addr(l.warehouse);
        for (tid, txs) in prog.threads.iter().enumerate() {
            for tx in txs {
                assert_eq!(tx.ops[0], Op::Read(wh0 + tid as u64 * 128));
            }
        }
    }
}
