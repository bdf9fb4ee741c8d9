// args: 4
int A[4] = {9, 7, 4, 1};
int find(int v) {
    for (int i = 0; i < 4; i++)
        if (A[i] == v) return i;
    return -1;
}
int f(int v) { return find(v) * 10 + find(3); }
