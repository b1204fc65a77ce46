import numpy as np, math
import scipy.sparse as sp
import scipy.sparse.linalg as spla

def quad1d(T=1.0, base=64, grading=2):
    w = 2.0*T/base
    cells = [(-T + (i+0.5)*w, w) for i in range(base)]
    for _ in range(grading):
        out = []
        for (c, wd) in cells:
            lo, hi = c-wd/2, c+wd/2
            # intersects open ball B_{T/4}
            if max(abs(c)-wd/2, 0.0) < T/4:
                out.append((lo+wd/4, wd/2)); out.append((lo+3*wd/4, wd/2))
            else:
                out.append((c, wd))
        cells = out
    nodes = np.array([c for c, _ in cells]); ws = np.array([wd for _, wd in cells])
    keep = np.abs(nodes) < T
    return nodes[keep], ws[keep]

def afun(x):  # two-phase on [0,1): 2 on [0,.5), 1 on [.5,1)
    xm = np.mod(x, 1.0)
    return np.where(xm < 0.5, 2.0, 1.0)

def stencil(shift, n):
    # interpolation shift on torus grid n: v(x_i + s) ~ (1-t) v[i+k] + t v[i+k+1]
    h = 1.0/n
    sh = shift/h
    k = math.floor(sh)
    t = sh - k
    return k, t

def shift_matrix(s, n):
    k, t = stencil(s, n)
    rows = np.arange(n)
    S = sp.csr_matrix((np.full(n, 1.0-t), (rows, (rows+k) % n)), shape=(n,n)) \
      + sp.csr_matrix((np.full(n, t), (rows, (rows+k+1) % n)), shape=(n,n))
    return S

def cell_nonlocal(lam, M, n, nodes, ws, rho):
    h = 1.0/n
    x = np.arange(n)*h
    a = afun(x)
    I = sp.identity(n, format='csr')
    H = sp.csr_matrix((n,n)); b = np.zeros(n); c0 = 0.0
    for xi, w, r in zip(nodes, ws, rho):
        if r == 0.0: continue
        A = (shift_matrix(lam*xi, n) - I)/lam
        D = sp.diags(a*h)
        cw = w*r
        H = H + cw*(A.T @ D @ A)
        b = b + cw*2.0*(A.T @ (a*h*(M*xi)))
        c0 = c0 + cw*np.sum(a*h*(M*xi)**2)
    # min over mean-zero: KKT
    ones = np.ones(n)
    K = sp.bmat([[2*H, ones[:,None]],[ones[None,:], None]], format='csc')
    rhs = np.concatenate([-b, [0.0]])
    sol = spla.spsolve(K, rhs)
    v = sol[:n]
    val = c0 + b@v + v@(H@v)
    return val

def cell_local(M, n, nodes, ws, rho):
    h = 1.0/n
    x = np.arange(n)*h
    a = afun(x)
    kq = np.sum(ws*rho*nodes**2)
    harm = 1.0/np.mean(1.0/a)
    return kq*harm*M*M

def supercrit(M, n, nodes, ws, rho):
    h = 1.0/n
    x = np.arange(n)*h
    kq = np.sum(ws*rho*nodes**2)
    return np.mean(afun(x))*kq*M*M

nodes, ws = quad1d(base=64, grading=2)
rho = (np.abs(nodes) <= 1.0).astype(float)
kq = np.sum(ws*rho*nodes**2)
print("kappa_quad =", kq, "err vs 2/3:", abs(kq-2/3))

f0 = cell_local(1.0, 256, nodes, ws, rho)
finf = supercrit(1.0, 256, nodes, ws, rho)
print("f0 =", f0, " = 4/3*kq:", 4/3*kq, "   finf =", finf)

lams = [2.0**k for k in range(-4, 7)]
vals = []
for lam in lams:
    n = int(min(max(math.ceil(16/lam), 64), 4096))
    v = cell_nonlocal(lam, 1.0, n, nodes, ws, rho)
    vals.append(v)
    print(f"lambda={lam:8.4f} n={n:5d} value={v:.6f}")
print("first vs f0 reldev:", abs(vals[0]-f0)/f0, " last vs finf:", abs(vals[-1]-finf)/finf)
jumps = [abs(vals[i+1]-vals[i])/max(vals[i], vals[i+1]) for i in range(len(vals)-1)]
print("max adjacent jump:", max(jumps))
