"""点集合の直径（凸包の頂点上でのみ全ペア距離を取る）"""

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist


def point_set_diameter(points) -> float:
    """
    max_{i,j} |p_i − p_j| を計算

    1D（形状 (N,) または (N, 1)）は max − min。2D は凸包の頂点に絞ってから pdist。
    凸包が退化する（共線など）場合は主軸への射影で 1D に落とします。
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) < 2:
        return 0.0
    if pts.shape[1] == 1:
        return float(pts.max() - pts.min())
    if len(pts) > 3:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            centered = pts - pts.mean(axis=0)
            _, _, vt = np.linalg.svd(centered, full_matrices=False)
            projected = centered @ vt[0]
            return float(projected.max() - projected.min())
    return float(pdist(pts).max())
