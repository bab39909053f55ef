# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled epoch kernel; mirrors ``_pykernel.PyEpochKernel`` step for step.

Partial blocks live in a fixed pool of reference-counted bitset nodes.  A node
is only ever mutated in place when the firing agent holds the sole reference,
so chains already handed to peers stay immutable.
"""
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, calloc, free
from libc.string cimport memcpy, memset

import numpy as np


cdef inline uint64_t _splitmix(uint64_t* state) nogil:
    cdef uint64_t z
    state[0] += <uint64_t>0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline int _ctz(uint64_t x) nogil:
    cdef int c = 0
    while not (x & 1):
        x >>= 1
        c += 1
    return c


cdef class CEpochKernel:
    cdef public int n
    cdef int words
    cdef int cap
    cdef public int block_size
    cdef public int k_dm
    cdef public bint direct_messaging
    cdef public int fanout
    cdef public int rate_limit
    cdef public double poison_tolerance

    cdef int* indptr
    cdef int* indices
    cdef int* scratch
    cdef uint64_t* bits
    cdef int* length
    cdef int* poison
    cdef int* refcnt
    cdef int* free_stack
    cdef int free_top

    cdef int* pb
    cdef int* chain
    cdef char* active
    cdef char* poisoned
    cdef int* rx
    cdef int64_t* dm_count

    cdef public int64_t changes
    cdef public int64_t messages
    cdef public int64_t dm_messages
    cdef public int64_t reports
    cdef public int64_t dropped
    cdef public int max_chain
    cdef public list closes

    backend = "cython"

    def __cinit__(self, indptr, indices, int block_size, *, int k_dm=1, bint direct_messaging=True,
                  int fanout=0, int rate_limit=0, poisoned=None, double poison_tolerance=0.25):
        cdef int i, n = len(indptr) - 1
        cdef int nnz = len(indices)
        cdef const int[::1] ip = np.ascontiguousarray(indptr, dtype=np.int32)
        cdef const int[::1] ix = np.ascontiguousarray(indices, dtype=np.int32)
        cdef int max_deg = 0
        self.n = n
        self.words = (n + 63) // 64
        self.cap = 2 * n + 8
        self.block_size = block_size
        self.k_dm = k_dm
        self.direct_messaging = direct_messaging
        self.fanout = fanout
        self.rate_limit = rate_limit
        self.poison_tolerance = poison_tolerance

        self.indptr = <int*>malloc((n + 1) * sizeof(int))
        self.indices = <int*>malloc((nnz + 1) * sizeof(int))
        if n >= 0:
            memcpy(self.indptr, &ip[0], (n + 1) * sizeof(int))
        if nnz > 0:
            memcpy(self.indices, &ix[0], nnz * sizeof(int))
        for i in range(n):
            if self.indptr[i + 1] - self.indptr[i] > max_deg:
                max_deg = self.indptr[i + 1] - self.indptr[i]
        self.scratch = <int*>malloc((max_deg + 1) * sizeof(int))

        self.bits = <uint64_t*>calloc(<size_t>self.cap * self.words + 1, sizeof(uint64_t))
        self.length = <int*>calloc(self.cap, sizeof(int))
        self.poison = <int*>calloc(self.cap, sizeof(int))
        self.refcnt = <int*>calloc(self.cap, sizeof(int))
        self.free_stack = <int*>malloc(self.cap * sizeof(int))
        self.free_top = 0
        for i in range(self.cap - 1, 0, -1):
            self.free_stack[self.free_top] = i
            self.free_top += 1

        self.pb = <int*>malloc(n * sizeof(int))
        self.chain = <int*>calloc(n, sizeof(int))
        self.active = <char*>malloc(n * sizeof(char))
        self.poisoned = <char*>calloc(n, sizeof(char))
        self.rx = <int*>calloc(n, sizeof(int))
        self.dm_count = <int64_t*>calloc(n, sizeof(int64_t))
        # node 0 is the shared empty partial block
        self.refcnt[0] = n
        for i in range(n):
            self.pb[i] = 0
            self.active[i] = 1
            if poisoned is not None and poisoned[i]:
                self.poisoned[i] = 1
        self.changes = 0
        self.messages = 0
        self.dm_messages = 0
        self.reports = 0
        self.dropped = 0
        self.max_chain = 0
        self.closes = []

    def __dealloc__(self):
        free(self.indptr)
        free(self.indices)
        free(self.scratch)
        free(self.bits)
        free(self.length)
        free(self.poison)
        free(self.refcnt)
        free(self.free_stack)
        free(self.pb)
        free(self.chain)
        free(self.active)
        free(self.poisoned)
        free(self.rx)
        free(self.dm_count)

    # -- node pool ------------------------------------------------------------

    cdef inline int _alloc(self) except -1:
        cdef int node
        if self.free_top == 0:
            raise MemoryError("partial-block pool exhausted")
        self.free_top -= 1
        node = self.free_stack[self.free_top]
        self.refcnt[node] = 0
        return node

    cdef inline void _decref(self, int node) noexcept:
        self.refcnt[node] -= 1
        if self.refcnt[node] == 0:
            self.free_stack[self.free_top] = node
            self.free_top += 1

    cdef inline void _assign(self, int agent, int node) noexcept:
        self.refcnt[node] += 1
        self._decref(self.pb[agent])
        self.pb[agent] = node

    cdef inline bint _has(self, int node, int agent) noexcept:
        return (self.bits[<size_t>node * self.words + (agent >> 6)] >> (agent & 63)) & 1

    cdef inline bint _same_members(self, int a, int b) noexcept:
        cdef int w
        cdef uint64_t* pa = self.bits + <size_t>a * self.words
        cdef uint64_t* pb_ = self.bits + <size_t>b * self.words
        if a == b:
            return True
        for w in range(self.words):
            if pa[w] != pb_[w]:
                return False
        return True

    # -- queries ----------------------------------------------------------------

    def set_active(self, int agent, bint flag):
        self.active[agent] = 1 if flag else 0

    def pb_members(self, int agent):
        cdef int node = self.pb[agent]
        cdef int i
        return [i for i in range(self.n) if self._has(node, i)]

    def pb_length(self, int agent):
        return self.length[self.pb[agent]]

    def chain_length(self, int agent):
        return self.chain[agent]

    # -- protocol ---------------------------------------------------------------

    cdef inline bint _attest(self, int r, int node) noexcept:
        cdef int ln = self.length[node]
        cdef bint contaminated = ln > 0 and (<double>self.poison[node]) / ln > self.poison_tolerance
        return contaminated == (self.poisoned[r] != 0)

    cdef int _deliver(self, int r, int snode, int schain, bint direct) except -1:
        cdef int lchain, lnode, eff_in, eff_local, w, t
        cdef uint64_t word
        cdef uint64_t* sp
        cdef uint64_t* lp
        if not self.active[r]:
            return 0
        self.messages += 1
        if self.rate_limit:
            if self.rx[r] >= self.rate_limit:
                self.dropped += 1
                return 0
            self.rx[r] += 1
        lchain = self.chain[r]
        if schain < lchain:
            return 0
        if schain > lchain:
            self.chain[r] = schain
            self._assign(r, snode)
            self.changes += 1
            return 0
        lnode = self.pb[r]
        eff_in = self.length[snode] - (1 if self._has(snode, r) else 0)
        eff_local = self.length[lnode] - (1 if self._has(lnode, r) else 0)
        if eff_in > eff_local:
            if self._attest(r, snode):
                self._assign(r, snode)
                self.changes += 1
            else:
                self.reports += 1
            return 0
        if eff_in == eff_local and self.direct_messaging and not direct and not self._same_members(snode, lnode):
            self.dm_count[r] += 1
            if self.dm_count[r] % self.k_dm:
                return 0
            sp = self.bits + <size_t>snode * self.words
            lp = self.bits + <size_t>lnode * self.words
            for w in range(self.words):
                word = sp[w] & ~lp[w]
                while word:
                    t = (w << 6) + _ctz(word)
                    word &= word - 1
                    if t == r:
                        continue
                    self.dm_messages += 1
                    self._deliver(t, lnode, lchain, True)
        return 0

    cdef uint64_t _fire(self, int a, uint64_t state) except? 0:
        cdef int node = self.pb[a]
        cdef int fresh, k, j, deg, start, count, tmp, schain
        cdef uint64_t r
        self.rx[a] = 0
        if not self._has(node, a):
            if self.length[node] + 1 >= self.block_size:
                self.chain[a] += 1
                fresh = self._alloc()
                memset(self.bits + <size_t>fresh * self.words, 0, self.words * sizeof(uint64_t))
                self.length[fresh] = 0
                self.poison[fresh] = 0
                self._assign(a, fresh)
                if self.chain[a] > self.max_chain:
                    self.max_chain = self.chain[a]
                    self.closes.append(a)
            elif self.refcnt[node] == 1:
                self.bits[<size_t>node * self.words + (a >> 6)] |= (<uint64_t>1) << (a & 63)
                self.length[node] += 1
                self.poison[node] += self.poisoned[a]
            else:
                fresh = self._alloc()
                memcpy(self.bits + <size_t>fresh * self.words, self.bits + <size_t>node * self.words,
                       self.words * sizeof(uint64_t))
                self.bits[<size_t>fresh * self.words + (a >> 6)] |= (<uint64_t>1) << (a & 63)
                self.length[fresh] = self.length[node] + 1
                self.poison[fresh] = self.poison[node] + self.poisoned[a]
                self._assign(a, fresh)
            self.changes += 1

        start = self.indptr[a]
        deg = self.indptr[a + 1] - start
        if self.fanout <= 0 or deg <= self.fanout:
            count = deg
            for k in range(deg):
                self.scratch[k] = self.indices[start + k]
        else:
            count = self.fanout
            for k in range(deg):
                self.scratch[k] = self.indices[start + k]
            for k in range(count):
                r = _splitmix(&state)
                j = k + <int>(r % <uint64_t>(deg - k))
                tmp = self.scratch[k]
                self.scratch[k] = self.scratch[j]
                self.scratch[j] = tmp

        # hold a reference: a direct message may replace a's partial block mid-broadcast
        node = self.pb[a]
        schain = self.chain[a]
        self.refcnt[node] += 1
        try:
            for k in range(count):
                self._deliver(self.scratch[k], node, schain, False)
        finally:
            self._decref(node)
        return state

    def fire(self, int a, rng_state):
        return self._fire(a, <uint64_t>rng_state)

    def run_epoch(self, order, seed):
        cdef uint64_t state = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
        cdef int[::1] arr = np.ascontiguousarray(order, dtype=np.int32)
        cdef Py_ssize_t k
        cdef int a
        for k in range(arr.shape[0]):
            a = arr[k]
            if self.active[a]:
                state = self._fire(a, state)
