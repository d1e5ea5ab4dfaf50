"""Compiled right-hand side for the plant ODE (numba).

Mirrors ``plant._PlantODE.__call__`` exactly; the test suite asserts the
two paths agree.  All configuration is flattened into plain arrays and
scalars so the kernel compiles to one tight function.  Falls back to the
numpy path transparently when numba is unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a soft dependency
    HAVE_NUMBA = False

    def njit(*a, **k):  # noqa: D103
        def wrap(f):
            return f
        return wrap


from .biokinetics import _K_NUTRIENT
from .components import IDX, N_COMP, PARTICULATE_IDX
from .gastransfer import HENRY_CC
from .parameters import KineticParameterSet

# kernel parameter vector layout
_PK_NAMES = (
    "q_AOB_AMO", "K_AOB_NH4", "K_AOB_O2_AMO", "mu_AOB_HAO", "K_AOB_NH2OH",
    "K_AOB_O2_HAO", "q_AOB_HAOstar", "K_AOB_HAO_NO", "b_AOB",
    "q_AOB_NN", "K_AOB_NN_NO", "K_AOB_NH2OH_N2O", "q_AOB_ND", "K_AOB_ND_NO2",
    "K_AOB_ND_O2", "K_AOB_I_O2", "K_AOB_I_O2_alt",
    "mu_NOB", "K_NOB_NO2", "K_NOB_O2", "K_NOB_NH4", "b_NOB",
    "mu_OHO", "K_OHO_SS", "K_OHO_O2", "K_OHO_NH4", "b_OHO",
    "k_hyd", "K_X", "eta_hyd", "K_OHO_O2_inh", "eta_NAR", "K_OHO_NO3",
    "K_OHO_SS_anox", "eta_NIR", "K_OHO_NO2", "K_OHO_NO", "eta_NOR",
    "K_OHO_I_NO_NIR", "K_OHO_I_NO_NOR", "K_OHO_I_NO_NOS", "eta_NOS", "K_OHO_N2O",
    "theta_AOB", "theta_NOB", "theta_OHO",
)
_PKI = {n: i for i, n in enumerate(_PK_NAMES)}


def pack_params(params: KineticParameterSet) -> np.ndarray:
    return np.array([params[n] for n in _PK_NAMES], dtype=np.float64)


_I_O2 = IDX["S_O2"]
_I_NH4 = IDX["S_NH4"]
_I_NH2OH = IDX["S_NH2OH"]
_I_NO2 = IDX["S_NO2"]
_I_NO3 = IDX["S_NO3"]
_I_NO = IDX["S_NO"]
_I_N2O = IDX["S_N2O"]
_I_N2 = IDX["S_N2"]
_I_SS = IDX["S_S"]
_I_XS = IDX["X_S"]
_I_XAOB = IDX["X_AOB"]
_I_XNOB = IDX["X_NOB"]
_I_XOHO = IDX["X_OHO"]
_K_NUT = _K_NUTRIENT
_N_PROC = 15


@njit(cache=True, fastmath=False)
def _rates_tank(c, fA, fN, fH, pk, baseline, r):
    o2 = max(c[_I_O2], 0.0)
    nh4 = max(c[_I_NH4], 0.0)
    nh2oh = max(c[_I_NH2OH], 0.0)
    no2 = max(c[_I_NO2], 0.0)
    no3 = max(c[_I_NO3], 0.0)
    no = max(c[_I_NO], 0.0)
    n2o = max(c[_I_N2O], 0.0)
    ss = max(c[_I_SS], 0.0)
    xs = max(c[_I_XS], 0.0)
    x_aob = max(c[_I_XAOB], 0.0) * fA
    x_nob = max(c[_I_XNOB], 0.0) * fN
    x_oho = max(c[_I_XOHO], 0.0) * fH

    m_o2_hao = o2 / (pk[5] + o2)
    m_nh2oh_n2o = nh2oh / (pk[11] + nh2oh)
    r[0] = pk[0] * (o2 / (pk[2] + o2)) * (nh4 / (pk[1] + nh4)) * x_aob
    r[1] = pk[3] * m_o2_hao * (nh2oh / (pk[4] + nh2oh)) * (nh4 / (_K_NUT + nh4)) * x_aob
    r[2] = pk[6] * m_o2_hao * (no / (pk[7] + no)) * x_aob
    r[3] = pk[9] * m_nh2oh_n2o * (no / (pk[10] + no)) * x_aob
    if baseline:
        f_o2_nd = o2 / (pk[14] + o2 + o2 * o2 / pk[15])
    else:
        f_o2_nd = pk[16] / (pk[16] + o2)
    r[4] = pk[12] * m_nh2oh_n2o * (no2 / (pk[13] + no2)) * f_o2_nd * x_aob
    r[5] = (pk[17] * (o2 / (pk[19] + o2)) * (no2 / (pk[18] + no2))
            * (nh4 / (pk[20] + nh4)) * x_nob)
    m_nut = nh4 / (pk[25] + nh4)
    r[6] = pk[22] * (ss / (pk[23] + ss)) * (o2 / (pk[24] + o2)) * m_nut * x_oho
    anox = pk[22] * (ss / (pk[33] + ss)) * (pk[30] / (pk[30] + o2)) * m_nut * x_oho
    r[7] = pk[31] * anox * (no3 / (pk[32] + no3))
    r[8] = pk[34] * anox * (no2 / (pk[35] + no2)) * (pk[38] / (pk[38] + no))
    r[9] = pk[37] * anox * (no / (pk[36] + no)) * (pk[39] / (pk[39] + no))
    r[10] = pk[41] * anox * (n2o / (pk[42] + n2o)) * (pk[40] / (pk[40] + no))
    r[11] = pk[8] * x_aob
    r[12] = pk[21] * x_nob
    r[13] = pk[26] * x_oho
    ratio = xs / (max(c[_I_XOHO], 0.0) + 1e-12)
    r[14] = (pk[27] * (ratio / (pk[28] + ratio))
             * (o2 / (pk[24] + o2) + pk[29] * (pk[30] / (pk[30] + o2))) * x_oho)


@njit(cache=True, fastmath=False)
def rhs_core(t, y, n_tanks, n_aer, aer_idx, volumes, setpoints, dyn_hs, hs_offset,
             steady_flag, steady_q, steady_T, steady_conc,
             grid, slopes, g_dt, time_offset,
             q_int, q_ras, q_was, prim_factor, part_idx, capture_fix, thickening,
             stoich, pk, baseline,
             kla_ratio, kla_anoxic, kla_min, kla_max, kla_base, pi_kp, pi_ki, pi_aw,
             sat_n2o_amb, henry_n2o, henry_no, amb_o2, amb_n2o, amb_no,
             hs_volfrac, hs_gasflow):
    dy = np.empty_like(y)

    # --- influent -----------------------------------------------------------
    aer_fac_ready = False
    if steady_flag:
        q_in = steady_q
        T = steady_T
        c_in = steady_conc
    else:
        aer_fac_ready = True
        x = (t - time_offset) / g_dt
        n = grid.shape[0]
        k = int(x)
        if k < 0:
            k = 0
            x = 0.0
        elif k >= n - 1:
            k = n - 2
            x = float(n - 1)
        s = x - k
        s2 = s * s
        s3 = s2 * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        vals = h00 * grid[k] + h10 * slopes[k] + h01 * grid[k + 1] + h11 * slopes[k + 1]
        q_in = vals[0]
        T = vals[1]
        c_in = vals[2: 2 + N_COMP]

    C = y[: n_tanks * N_COMP].reshape(n_tanks, N_COMP)
    pi = y[n_tanks * N_COMP: n_tanks * N_COMP + n_aer]

    # --- clarifier algebra ---------------------------------------------------
    c_last = C[n_tanks - 1]
    q_feed = q_in + q_ras
    q_uf = q_ras + q_was
    capture = capture_fix
    if capture < 0.0:
        capture = thickening * q_uf / q_feed
        if capture > 1.0:
            capture = 1.0
    c_uf = np.empty(N_COMP)
    for j in range(N_COMP):
        c_uf[j] = c_last[j]
    c_uf[_I_N2O] = 0.0
    c_uf[_I_NO] = 0.0
    fac_uf = capture * q_feed / q_uf
    for jj in range(part_idx.shape[0]):
        j = part_idx[jj]
        c_uf[j] = fac_uf * c_last[j]

    q_tank = q_in + q_ras + q_int
    c_mix = np.empty(N_COMP)
    for j in range(N_COMP):
        c_mix[j] = (q_in * prim_factor[j] * c_in[j] + q_ras * c_uf[j]
                    + q_int * c_last[j]) / q_tank

    # --- transport + biology --------------------------------------------------
    dT = T - 20.0
    fA = pk[43] ** dT
    fN = pk[44] ** dT
    fH = pk[45] ** dT
    r = np.empty(_N_PROC)
    for i in range(n_tanks):
        qv = q_tank / volumes[i]
        base = i * N_COMP
        if i == 0:
            for j in range(N_COMP):
                dy[base + j] = qv * (c_mix[j] - C[0, j])
        else:
            for j in range(N_COMP):
                dy[base + j] = qv * (C[i - 1, j] - C[i, j])
        _rates_tank(C[i], fA, fN, fH, pk, baseline, r)
        for k2 in range(_N_PROC):
            rk = r[k2]
            if rk != 0.0:
                for j in range(N_COMP):
                    dy[base + j] += rk * stoich[k2, j]

    # --- gas transfer + PI control ---------------------------------------------
    o2sat = 14.652 + T * (-0.41022 + T * (7.991e-3 - 7.7774e-5 * T))
    for a in range(n_aer):
        i = aer_idx[a]
        do = C[i, _I_O2]
        err = setpoints[a] - do
        raw = kla_base + pi_kp * err + pi_ki * pi[a]
        kla = raw
        if kla < kla_min:
            kla = kla_min
        elif kla > kla_max:
            kla = kla_max
        dy[n_tanks * N_COMP + a] = err + (kla - raw) / pi_aw
        if aer_fac_ready:
            kla = kla * vals[2 + N_COMP + a]

        sat_o2 = o2sat
        sat_n2o = sat_n2o_amb
        sat_no = 0.0
        if dyn_hs:
            hbase = hs_offset + a * 3
            sat_o2 = o2sat * y[hbase + 0] / amb_o2
            sat_n2o = henry_n2o * y[hbase + 1]
            sat_no = henry_no * y[hbase + 2]
        f_o2 = kla * kla_ratio[0] * (C[i, _I_O2] - sat_o2)
        f_n2o = kla * kla_ratio[1] * (C[i, _I_N2O] - sat_n2o)
        f_no = kla * kla_ratio[2] * (C[i, _I_NO] - sat_no)
        f_n2 = kla * kla_ratio[3] * C[i, _I_N2]
        base = i * N_COMP
        dy[base + _I_O2] -= f_o2
        dy[base + _I_N2O] -= f_n2o
        dy[base + _I_NO] -= f_no
        dy[base + _I_N2] -= f_n2
        if dyn_hs:
            vol = volumes[i]
            v_gas = hs_volfrac * vol
            q_gas = hs_gasflow * kla * vol
            hbase = hs_offset + a * 3
            dy[hbase + 0] = (q_gas * (amb_o2 - y[hbase + 0]) + f_o2 * vol) / v_gas
            dy[hbase + 1] = (q_gas * (amb_n2o - y[hbase + 1]) + f_n2o * vol) / v_gas
            dy[hbase + 2] = (q_gas * (amb_no - y[hbase + 2]) + f_no * vol) / v_gas

    for i in range(n_tanks):
        aerated = False
        for a in range(n_aer):
            if aer_idx[a] == i:
                aerated = True
        if not aerated:
            base = i * N_COMP
            dy[base + _I_O2] -= kla_anoxic * kla_ratio[0] * (C[i, _I_O2] - o2sat)
            dy[base + _I_N2O] -= kla_anoxic * kla_ratio[1] * (C[i, _I_N2O] - sat_n2o_amb)
            dy[base + _I_NO] -= kla_anoxic * kla_ratio[2] * C[i, _I_NO]
            dy[base + _I_N2] -= kla_anoxic * kla_ratio[3] * C[i, _I_N2]
    return dy


class FastRHS:
    """Callable wrapper binding a plant configuration to the compiled core."""

    def __init__(self, ode):
        cfg = ode.cfg
        self.ode = ode
        self.part_idx = PARTICULATE_IDX.astype(np.int64)
        self.pk = pack_params(cfg.params)
        self.baseline = cfg.variant == "baseline_two_pathway"
        self.stoich = np.ascontiguousarray(ode.stoich_matrix)
        self.capture_fix = -1.0 if ode._thickening is not None else float(ode._capture)
        self.thickening = float(ode._thickening or 0.0)
        a = cfg.aeration
        self.args_static = dict(
            n_tanks=ode.n_tanks, n_aer=ode.n_aer,
            aer_idx=ode.aer_idx.astype(np.int64),
            volumes=ode.volumes, setpoints=ode.setpoints,
            dyn_hs=ode.dynamic_headspace, hs_offset=ode.hs_offset,
            q_int=ode.q_int, q_ras=ode.q_ras, q_was=ode.q_was,
            prim_factor=ode._prim_factor,
            kla_ratio=ode.kla_ratio, kla_anoxic=a.kla_anoxic,
            kla_min=a.kla_min, kla_max=a.kla_max, kla_base=a.kla_base,
            pi_kp=a.pi_kp, pi_ki=a.pi_ki, pi_aw=a.pi_antiwindup,
            sat_n2o_amb=ode._sat_n2o_amb,
            henry_n2o=float(HENRY_CC["N2O"]), henry_no=float(HENRY_CC["NO"]),
            amb_o2=ode._c_amb3[0], amb_n2o=ode._c_amb3[1], amb_no=ode._c_amb3[2],
            hs_volfrac=cfg.headspace.volume_fraction,
            hs_gasflow=cfg.headspace.gasflow_per_kla,
        )

        self._args = None
        self._args_key = object()

    def _build_args(self):
        ode = self.ode
        if ode.steady_input is not None:
            q, c, T = ode.steady_input
            steady = (True, float(q), float(T), np.asarray(c, dtype=np.float64))
        else:
            steady = (False, 0.0, 0.0, np.zeros(N_COMP))
        s = self.args_static
        return (
            s["n_tanks"], s["n_aer"], s["aer_idx"], s["volumes"], s["setpoints"],
            s["dyn_hs"], s["hs_offset"],
            steady[0], steady[1], steady[2], steady[3],
            ode.series._grid, ode.series._slopes, ode.series.dt, ode.time_offset,
            s["q_int"], s["q_ras"], s["q_was"], s["prim_factor"], self.part_idx,
            self.capture_fix, self.thickening,
            self.stoich, self.pk, self.baseline,
            s["kla_ratio"], s["kla_anoxic"], s["kla_min"], s["kla_max"], s["kla_base"],
            s["pi_kp"], s["pi_ki"], s["pi_aw"],
            s["sat_n2o_amb"], s["henry_n2o"], s["henry_no"],
            s["amb_o2"], s["amb_n2o"], s["amb_no"],
            s["hs_volfrac"], s["hs_gasflow"],
        )

    def __call__(self, t, y):
        # the phase key changes when simulate() flips steady/dynamic mode
        key = (self.ode.steady_input is None, self.ode.time_offset)
        if key != self._args_key:
            self._args = self._build_args()
            self._args_key = key
        return rhs_core(t, np.ascontiguousarray(y, dtype=np.float64), *self._args)
