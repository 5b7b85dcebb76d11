# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: contact gap, first-contact search, kd-tree query.

Semantics match ``cmreg._fallback`` bit for bit. The contact kernel also
culls edges: peg samples look up hole-edge candidates in a uniform grid over
the hole plane, and hole vertices use peg-edge candidate lists prepared at
identity, valid while the section moves less than the list margin. Both
culls are exact (the nearest edge is always a candidate).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos, fabs, fmax, INFINITY, M_PI

cnp.import_array()

cdef enum:
    MAXV = 512


cdef inline void pose_rt(const double* p, double* R, double* t) noexcept nogil:
    cdef double k = M_PI / 180.0
    cdef double a = p[3] * k, b = p[4] * k, g = p[5] * k
    cdef double ca = cos(a), cb = cos(b), cg = cos(g)
    cdef double sa = sin(a), sb = sin(b), sg = sin(g)
    R[0] = cg * cb
    R[1] = cg * sb * sa - sg * ca
    R[2] = cg * sb * ca + sg * sa
    R[3] = sg * cb
    R[4] = sg * sb * sa + cg * ca
    R[5] = sg * sb * ca - cg * sa
    R[6] = -sb
    R[7] = cb * sa
    R[8] = cb * ca
    t[0] = p[0]
    t[1] = p[1]
    t[2] = p[2]


cdef inline double signed_point(double px, double py, const double* V, int nv,
                                const double* en, const double* vn,
                                const int* cand, int ncand) noexcept nogil:
    cdef int c, e, nxt, best_e = -1, best_feat = 0
    cdef double ax, ay, bx, by, abx, aby, len2, raw, qx, qy, dx, dy, d2
    cdef double best = INFINITY, bdx = 0.0, bdy = 0.0, nx, ny
    cdef int feat
    cdef int n = ncand if cand != NULL else nv
    for c in range(n):
        e = cand[c] if cand != NULL else c
        nxt = e + 1
        if nxt == nv:
            nxt = 0
        ax = V[2 * e]
        ay = V[2 * e + 1]
        bx = V[2 * nxt]
        by = V[2 * nxt + 1]
        abx = bx - ax
        aby = by - ay
        len2 = abx * abx + aby * aby
        raw = ((px - ax) * abx + (py - ay) * aby) / len2
        if raw <= 0.0:
            qx = ax
            qy = ay
            feat = 0
        elif raw >= 1.0:
            qx = bx
            qy = by
            feat = 1
        else:
            qx = ax + raw * abx
            qy = ay + raw * aby
            feat = 2
        dx = px - qx
        dy = py - qy
        d2 = dx * dx + dy * dy
        if d2 < best:
            best = d2
            best_e = e
            best_feat = feat
            bdx = dx
            bdy = dy
    if best_feat == 0:
        nx = vn[2 * best_e]
        ny = vn[2 * best_e + 1]
    elif best_feat == 1:
        nxt = best_e + 1
        if nxt == nv:
            nxt = 0
        nx = vn[2 * nxt]
        ny = vn[2 * nxt + 1]
    else:
        nx = en[2 * best_e]
        ny = en[2 * best_e + 1]
    if bdx * nx + bdy * ny < 0.0:
        return -sqrt(best)
    return sqrt(best)


cdef class ContactKernel:
    cdef double[:, ::1] samples
    cdef double[:, ::1] peg_verts
    cdef double[:, ::1] hole_verts
    cdef double[:, ::1] hole_edge_n
    cdef double[:, ::1] hole_vert_n
    cdef int[::1] cell_ptr
    cdef int[::1] cell_idx
    cdef double gx0, gy0, gh
    cdef int gnx, gny
    cdef int[::1] pcell_ptr
    cdef int[::1] pcell_idx
    cdef double px0, py0, ph, kappa
    cdef int pnx, pny
    cdef public double peg_length
    cdef public int n_slices
    cdef public double rho
    cdef public double r_max
    cdef int K, Vp, Vh

    def __init__(self, dict data):
        self.samples = np.ascontiguousarray(data["samples"], dtype=np.float64)
        self.peg_verts = np.ascontiguousarray(data["peg_verts"], dtype=np.float64)
        self.hole_verts = np.ascontiguousarray(data["hole_verts"], dtype=np.float64)
        self.hole_edge_n = np.ascontiguousarray(data["hole_edge_n"], dtype=np.float64)
        self.hole_vert_n = np.ascontiguousarray(data["hole_vert_n"], dtype=np.float64)
        self.cell_ptr = np.ascontiguousarray(data["cell_ptr"], dtype=np.int32)
        self.cell_idx = np.ascontiguousarray(data["cell_idx"], dtype=np.int32)
        self.gx0 = float(data["grid_origin"][0])
        self.gy0 = float(data["grid_origin"][1])
        self.gh = float(data["grid_cell"])
        self.gnx = int(data["grid_shape"][0])
        self.gny = int(data["grid_shape"][1])
        self.pcell_ptr = np.ascontiguousarray(data["pcell_ptr"], dtype=np.int32)
        self.pcell_idx = np.ascontiguousarray(data["pcell_idx"], dtype=np.int32)
        self.px0 = float(data["pgrid_origin"][0])
        self.py0 = float(data["pgrid_origin"][1])
        self.ph = float(data["pgrid_cell"])
        self.pnx = int(data["pgrid_shape"][0])
        self.pny = int(data["pgrid_shape"][1])
        self.kappa = float(data["pgrid_kappa"])
        self.peg_length = float(data["peg_length"])
        self.n_slices = int(data["n_slices"])
        self.rho = float(data["rho"])
        self.r_max = float(data["r_max"])
        self.K = self.samples.shape[0]
        self.Vp = self.peg_verts.shape[0]
        self.Vh = self.hole_verts.shape[0]
        if self.Vp > MAXV:
            raise ValueError("peg polygon has too many vertices for the compiled kernel")

    cdef double _gap(self, const double* p) noexcept nogil:
        cdef double R[9]
        cdef double t[3]
        cdef double V[2 * MAXV]
        cdef double En[2 * MAXV]
        cdef double Vn[2 * MAXV]
        cdef double A00, A01, A10, A11, ox, oy, s, s_full, sm, r22
        cdef double best = INFINITY, g, px, py, dx, dy, nrm
        cdef double det, tr, disc, s1, s2, ux, uy
        cdef int sec, L = self.n_slices, k, j, nxt, prv, use_grid, hit
        cdef int c0, c1, ix, iy
        cdef double fx, fy
        pose_rt(p, R, t)
        if t[2] > 0.0:
            return INFINITY
        r22 = R[8]
        s_full = INFINITY
        for k in range(self.Vp):
            sm = -(t[2] + R[6] * self.peg_verts[k, 0] + R[7] * self.peg_verts[k, 1]) / r22
            if sm < s_full:
                s_full = sm
        if s_full < 0.0:
            s_full = 0.0
        if s_full > self.peg_length:
            s_full = self.peg_length
        for sec in range(L + 1):
            if sec < L:
                A00 = R[0]
                A01 = R[1]
                A10 = R[3]
                A11 = R[4]
                if L > 1:
                    s = s_full * sec / (L - 1)
                else:
                    s = 0.0
                ox = R[2] * s + t[0]
                oy = R[5] * s + t[1]
            else:
                A00 = R[0] - R[2] * R[6] / r22
                A01 = R[1] - R[2] * R[7] / r22
                A10 = R[3] - R[5] * R[6] / r22
                A11 = R[4] - R[5] * R[7] / r22
                ox = t[0] - R[2] * t[2] / r22
                oy = t[1] - R[5] * t[2] / r22
            for k in range(self.Vp):
                V[2 * k] = self.peg_verts[k, 0] * A00 + self.peg_verts[k, 1] * A01 + ox
                V[2 * k + 1] = self.peg_verts[k, 0] * A10 + self.peg_verts[k, 1] * A11 + oy
            for k in range(self.Vp):
                nxt = k + 1
                if nxt == self.Vp:
                    nxt = 0
                dy = V[2 * nxt + 1] - V[2 * k + 1]
                dx = V[2 * nxt] - V[2 * k]
                nrm = sqrt(dy * dy + dx * dx)
                En[2 * k] = dy / nrm
                En[2 * k + 1] = -dx / nrm
            for k in range(self.Vp):
                prv = k - 1
                if prv < 0:
                    prv = self.Vp - 1
                Vn[2 * k] = En[2 * k] + En[2 * prv]
                Vn[2 * k + 1] = En[2 * k + 1] + En[2 * prv + 1]
            # the peg-space grid is exact while A distorts distances by at most kappa
            det = A00 * A11 - A01 * A10
            tr = A00 * A00 + A01 * A01 + A10 * A10 + A11 * A11
            disc = tr * tr - 4.0 * det * det
            if disc < 0.0:
                disc = 0.0
            disc = sqrt(disc)
            s1 = sqrt(0.5 * (tr + disc))
            s2 = 0.5 * (tr - disc)
            if s2 < 0.0:
                s2 = 0.0
            s2 = sqrt(s2)
            use_grid = det != 0.0 and s1 <= self.kappa * s2
            for k in range(self.K):
                px = self.samples[k, 0] * A00 + self.samples[k, 1] * A01 + ox
                py = self.samples[k, 0] * A10 + self.samples[k, 1] * A11 + oy
                fx = (px - self.gx0) / self.gh
                fy = (py - self.gy0) / self.gh
                if fx >= 0.0 and fy >= 0.0 and fx < self.gnx and fy < self.gny:
                    ix = <int>fx
                    iy = <int>fy
                    c0 = self.cell_ptr[iy * self.gnx + ix]
                    c1 = self.cell_ptr[iy * self.gnx + ix + 1]
                    g = signed_point(px, py, &self.hole_verts[0, 0], self.Vh,
                                     &self.hole_edge_n[0, 0], &self.hole_vert_n[0, 0],
                                     &self.cell_idx[c0], c1 - c0)
                else:
                    g = signed_point(px, py, &self.hole_verts[0, 0], self.Vh,
                                     &self.hole_edge_n[0, 0], &self.hole_vert_n[0, 0],
                                     NULL, 0)
                if g < best:
                    best = g
            for j in range(self.Vh):
                px = self.hole_verts[j, 0]
                py = self.hole_verts[j, 1]
                hit = 0
                if use_grid:
                    ux = (A11 * (px - ox) - A01 * (py - oy)) / det
                    uy = (A00 * (py - oy) - A10 * (px - ox)) / det
                    fx = (ux - self.px0) / self.ph
                    fy = (uy - self.py0) / self.ph
                    if fx >= 0.0 and fy >= 0.0 and fx < self.pnx and fy < self.pny:
                        ix = <int>fx
                        iy = <int>fy
                        c0 = self.pcell_ptr[iy * self.pnx + ix]
                        c1 = self.pcell_ptr[iy * self.pnx + ix + 1]
                        g = signed_point(px, py, V, self.Vp, En, Vn, &self.pcell_idx[c0], c1 - c0)
                        hit = 1
                if not hit:
                    g = signed_point(px, py, V, self.Vp, En, Vn, NULL, 0)
                if g < best:
                    best = g
        return best

    def gap(self, pose):
        cdef double p[6]
        cdef int i
        for i in range(6):
            p[i] = pose[i]
        return self._gap(p)

    def gap_many(self, poses):
        cdef double[:, ::1] P = np.ascontiguousarray(np.asarray(poses, dtype=np.float64).reshape(-1, 6))
        cdef Py_ssize_t n = P.shape[0], i
        out = np.empty(n)
        cdef double[::1] o = out
        for i in range(n):
            o[i] = self._gap(&P[i, 0])
        return out

    def lipschitz(self, p0, p1):
        cdef double a[6]
        cdef double d[6]
        cdef int i
        for i in range(6):
            a[i] = float(p0[i])
            d[i] = float(p1[i]) - a[i]
        return self._lip(a, d)

    cdef double _lip(self, const double* a, const double* d) noexcept nogil:
        cdef double lin = sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        cdef double ang = (fabs(d[3]) + fabs(d[4]) + fabs(d[5])) * M_PI / 180.0
        cdef double depth = 0.0, am, bm, c, smax = self.peg_length
        if -a[2] > depth:
            depth = -a[2]
        if -(a[2] + d[2]) > depth:
            depth = -(a[2] + d[2])
        am = fmax(fabs(a[3]), fabs(a[3] + d[3]))
        bm = fmax(fabs(a[4]), fabs(a[4] + d[4]))
        if am < 80.0 and bm < 80.0:
            c = cos(am * M_PI / 180.0) * cos(bm * M_PI / 180.0)
            smax = (depth + self.r_max * sqrt(1.0 - c * c)) / c
            if smax > self.peg_length:
                smax = self.peg_length
        return 1.3 * (lin + ang * sqrt(self.r_max * self.r_max + smax * smax))

    cdef double _gap_at(self, const double* p0, const double* d, double lam) noexcept nogil:
        cdef double q[6]
        cdef int i
        for i in range(6):
            q[i] = p0[i] + lam * d[i]
        return self._gap(q)

    def first_contact(self, p0, p1, double contact_tol, double tol, double accept=0.0):
        cdef double a[6]
        cdef double d[6]
        cdef int i, side = 0, it
        for i in range(6):
            a[i] = float(p0[i])
            d[i] = float(p1[i]) - a[i]
        cdef double length = 0.0
        for i in range(6):
            length += d[i] * d[i]
        length = sqrt(length)
        if length == 0.0:
            return None
        cdef double lip = self._lip(a, d)
        cdef double lam = 0.0, f, step, trial, ft, lo, flo, hi, fhi, x, fx, half
        cdef double eps = tol / length
        f = self._gap(a) - contact_tol
        while True:
            step = f / lip
            if step < eps:
                step = eps
            if lam + step >= 1.0:
                return None
            trial = lam + 3.0 * step
            if trial > 1.0:
                trial = 1.0
            ft = self._gap_at(a, d, trial) - contact_tol
            if ft > 0.0:
                if trial >= 1.0:
                    return None
                lam = trial
                f = ft
                continue
            lo = lam + step
            flo = self._gap_at(a, d, lo) - contact_tol
            if flo <= 0.0:
                lo = lam
                flo = f
            hi = trial
            fhi = ft
            break
        if fhi >= -accept:
            return hi, fhi + contact_tol
        for it in range(100):
            if hi - lo <= eps:
                break
            x = (lo * fhi - hi * flo) / (fhi - flo)
            half = 0.5 * eps
            if x < lo + half:
                x = lo + half
            if x > hi - half:
                x = hi - half
            fx = self._gap_at(a, d, x) - contact_tol
            if fx > 0.0:
                lo = x
                flo = fx
                if side == 1:
                    fhi *= 0.5
                side = 1
            else:
                hi = x
                fhi = fx
                if fx >= -accept:
                    break
                if side == -1:
                    flo *= 0.5
                side = -1
        return hi, fhi + contact_tol


# ------------------------------------------------------------------ kd-tree

cdef inline double wrap(double d) noexcept nogil:
    if d > 180.0:
        d = d - 360.0
    if d <= -180.0:
        d = d + 360.0
    return d


cdef inline double box_bound(const double* q, const double* lo, const double* hi) noexcept nogil:
    cdef double s = 0.0, v, e, e1, e2
    cdef int k
    for k in range(6):
        v = q[k]
        if lo[k] <= v and v <= hi[k]:
            continue
        if k < 3:
            if v < lo[k]:
                e = lo[k] - v
            else:
                e = v - hi[k]
        else:
            e1 = fabs(wrap(lo[k] - v))
            e2 = fabs(wrap(hi[k] - v))
            e = e1 if e1 < e2 else e2
        s += e * e
    return s


def kd_query(dict tree, queries, exclude=None):
    cdef double[:, ::1] data = tree["data"]
    cdef long long[::1] perm = tree["perm"]
    cdef long long[::1] left = tree["left"]
    cdef long long[::1] right = tree["right"]
    cdef long long[::1] start = tree["start"]
    cdef long long[::1] end = tree["end"]
    cdef double[:, ::1] blo = tree["lo"]
    cdef double[:, ::1] bhi = tree["hi"]
    cdef long long[::1] dim = tree["dim"]
    cdef double[::1] split = tree["split"]
    cdef double[:, ::1] Q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 6))
    cdef Py_ssize_t m = Q.shape[0], qi
    out_i = np.empty(m, dtype=np.int64)
    out_d = np.empty(m)
    cdef long long[::1] oi = out_i
    cdef double[::1] od = out_d
    cdef long long[::1] ex
    cdef bint has_ex = exclude is not None
    if has_ex:
        ex = np.ascontiguousarray(exclude, dtype=np.int64)
    cdef long long stack[512]
    cdef int sp
    cdef long long node, s, e, r, idx, best_i, skip, near, far
    cdef double best, v, d0, d1, d2, d3, d4, d5
    cdef const double* q
    with nogil:
        for qi in range(m):
            q = &Q[qi, 0]
            skip = ex[qi] if has_ex else -1
            best = INFINITY
            best_i = -1
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                if box_bound(q, &blo[node, 0], &bhi[node, 0]) > best:
                    continue
                if left[node] < 0:
                    s = start[node]
                    e = end[node]
                    for r in range(s, e):
                        idx = perm[r]
                        if idx == skip:
                            continue
                        d0 = data[r, 0] - q[0]
                        d1 = data[r, 1] - q[1]
                        d2 = data[r, 2] - q[2]
                        d3 = wrap(data[r, 3] - q[3])
                        d4 = wrap(data[r, 4] - q[4])
                        d5 = wrap(data[r, 5] - q[5])
                        v = d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3 + d4 * d4 + d5 * d5
                        if v < best or (v == best and idx < best_i):
                            best = v
                            best_i = idx
                    continue
                if q[dim[node]] < split[node]:
                    near = left[node]
                    far = right[node]
                else:
                    near = right[node]
                    far = left[node]
                stack[sp] = far
                sp += 1
                stack[sp] = near
                sp += 1
            oi[qi] = best_i
            od[qi] = best
    return out_i, out_d
