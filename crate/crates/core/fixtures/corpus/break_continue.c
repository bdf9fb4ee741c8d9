// args: 20
int f(int n) {
    int s = 0;
    for (int i = 0; i < n; i++) {
        if (i % 3 == 0) continue;
        if (i > 12) break;
        s += i;
    }
    int j = 0;
    while (1) {
        j++;
        if (j == 4) continue;
        if (j > 6) break;
        s = s * 2 - j;
    }
    return s;
}
