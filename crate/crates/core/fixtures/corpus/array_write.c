// args: 7
int f(int k) {
    int a[5];
    for (int i = 0; i < 5; i++)
        a[i] = i * k;
    a[k % 5] = 100;
    return a[0] + a[1] + a[2] + a[3] + a[4];
}
