// args: 10
#define N 10
int S(int n) {
    int a[N] = {[0 ... N-1] = 1,};
    if (n > N || n < 3) return 0;
    for (int i = 2; i < n; ++i) {
        if (!a[i]) continue;
        for (int j = 2*i; j < n; j += i) a[j] = 0;
    }
    for (int i = n-1; i > 2; --i)
        if (a[i]) return i;
    return 0;
}
